use glyphmix::warp::{build_attention, inverse_align, warp, SpatialParams};
use glyphmix::Raster;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BANDWIDTH: f64 = 0.3;

/// Random binary-ish glyph with an empty margin of `margin` pixels.
fn framed_image(rng: &mut ChaCha8Rng, n: usize, margin: usize) -> Raster<f64> {
    Raster::from_fn(n, n, |i, j| {
        let inside = i >= margin && j >= margin && i < n - margin && j < n - margin;
        if inside && rng.random_bool(0.4) {
            1.0
        } else {
            0.0
        }
    })
}

/// `out(i, j) = src(i − dv, j − dh)`, zero outside the grid.
fn shift_oracle(src: &Raster<f64>, dh: isize, dv: isize) -> Raster<f64> {
    Raster::from_fn(src.height(), src.width(), |i, j| {
        src.get_signed(i as isize - dv, j as isize - dh).unwrap_or(0.0)
    })
}

#[test]
fn identity_attention_concentrates_on_self() {
    let att = build_attention(&SpatialParams::<f64>::zero(), (32, 32), BANDWIDTH).unwrap();
    let mut min_self: f64 = 1.0;
    for i in 0..32 {
        for j in 0..32 {
            min_self = min_self.min(att.weight(i, j, i, j));
        }
    }
    assert!(min_self >= 0.98, "smallest self weight {min_self}");
}

#[test]
fn integer_offsets_match_discrete_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let img = framed_image(&mut rng, 32, 4);
        for dh in -3..=3 {
            for dv in -3..=3 {
                let lambda = SpatialParams::offset(dh as f64, dv as f64);
                let got = warp(&img, &lambda, BANDWIDTH).unwrap();
                let want = shift_oracle(&img, dh, dv);
                let err = got.max_abs_diff(&want);
                assert!(err <= 0.05, "offset ({dh}, {dv}): max abs error {err}");
            }
        }
    }
}

#[test]
fn attention_rows_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let lambda = SpatialParams {
            r: rng.random_range(-0.3..0.3),
            o_h: rng.random_range(-4.0..4.0),
            o_v: rng.random_range(-4.0..4.0),
            s_h: rng.random_range(-0.3..0.3),
            s_v: rng.random_range(-0.3..0.3),
            a: rng.random_range(-0.3..0.3),
        };
        let att = build_attention(&lambda, (32, 32), BANDWIDTH).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let total = att.row_total(i, j);
                assert!((total - 1.0).abs() <= 1e-6, "row ({i}, {j}) sums to {total}");
            }
        }
    }
}

#[test]
fn dense_row_agrees_with_weight_lookup_and_mode() {
    let lambda = SpatialParams {
        r: 0.05,
        o_h: 1.3,
        o_v: -0.6,
        s_h: 0.02,
        s_v: -0.03,
        a: 0.04,
    };
    let att = build_attention(&lambda, (16, 16), BANDWIDTH).unwrap();
    let row = att.dense_row(7, 9);
    let total: f64 = row.as_slice().iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    let (m, n) = att.mode(7, 9);
    let best = row
        .as_slice()
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (p, &v)| if v > acc.1 { (p, v) } else { acc });
    assert_eq!(best.0, m * 16 + n);
}

#[test]
fn inverse_alignment_undoes_an_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = framed_image(&mut rng, 32, 5);
    let lambda = SpatialParams::offset(2.0, -1.0);
    let moved = warp(&img, &lambda, BANDWIDTH).unwrap();
    let back = inverse_align(&moved, &lambda, BANDWIDTH).unwrap();
    let blurred = warp(&img, &SpatialParams::zero(), BANDWIDTH).unwrap();
    assert!(back.max_abs_diff(&blurred) < 0.05);
}

#[test]
fn invalid_parameters_are_rejected() {
    let img = Raster::<f64>::zeros(8, 8);
    let mut bad = SpatialParams::zero();
    bad.a = -1.5;
    assert!(warp(&img, &bad, BANDWIDTH).is_err());
    bad = SpatialParams::zero();
    bad.o_h = f64::NAN;
    assert!(warp(&img, &bad, BANDWIDTH).is_err());
    assert!(warp(&img, &SpatialParams::zero(), 0.0).is_err());
}

fn spatial() -> impl Strategy<Value = SpatialParams<f64>> {
    (
        -0.2..0.2f64,
        -3.0..3.0f64,
        -3.0..3.0f64,
        -0.2..0.2f64,
        -0.2..0.2f64,
        -0.2..0.2f64,
    )
        .prop_map(|(r, o_h, o_v, s_h, s_v, a)| SpatialParams {
            r,
            o_h,
            o_v,
            s_h,
            s_v,
            a,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warp_is_linear_in_the_template(
        lambda in spatial(),
        a in prop::collection::vec(0.0..1.0f64, 100),
        b in prop::collection::vec(0.0..1.0f64, 100),
        alpha in -2.0..2.0f64,
    ) {
        let ta = Raster::from_vec(10, 10, a).unwrap();
        let tb = Raster::from_vec(10, 10, b).unwrap();
        let combo = Raster::from_fn(10, 10, |i, j| ta[(i, j)] + alpha * tb[(i, j)]);
        let lhs = warp(&combo, &lambda, BANDWIDTH).unwrap();
        let wa = warp(&ta, &lambda, BANDWIDTH).unwrap();
        let wb = warp(&tb, &lambda, BANDWIDTH).unwrap();
        let rhs = Raster::from_fn(10, 10, |i, j| wa[(i, j)] + alpha * wb[(i, j)]);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn warp_preserves_the_unit_interval(
        lambda in spatial(),
        t in prop::collection::vec(0.0..1.0f64, 64),
    ) {
        let out = warp(&Raster::from_vec(8, 8, t).unwrap(), &lambda, BANDWIDTH).unwrap();
        prop_assert!(out.as_slice().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }
}

