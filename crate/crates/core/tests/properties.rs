//! Property tests for the invariants the kernels, losses and formats promise.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use s2attn::attention::{
    global_attention_weights, neighborhood_attention_backward, neighborhood_attention_forward,
    neighborhood_attention_weights, s2_attention_forward, AttentionConfig, NeighborhoodMap,
};
use s2attn::block::{block_forward, instance_norm, mlp_forward, AttentionMode, BlockParams};
use s2attn::geometry::{geodesic_distance, geodesic_distance_vec, to_cartesian, Rotation};
use s2attn::harmonics::spectral_position_embedding;
use s2attn::io::{read_field, write_field};
use s2attn::losses::{
    confusion_fractions, cross_entropy, l1_distance, l2_distance_sq, sobolev_w11_seminorm, ClassMask, PointWeights,
};
use s2attn::sum::{pairwise_accumulate, pairwise_sum};
use s2attn::{Field, GridFamily, SphericalGrid};

fn family() -> impl Strategy<Value = GridFamily> {
    prop_oneof![Just(GridFamily::Gaussian), Just(GridFamily::Equiangular)]
}

fn small_grid() -> impl Strategy<Value = SphericalGrid> {
    (family(), 3usize..7, 2usize..5).prop_map(|(f, nlat, k)| SphericalGrid::new(f, nlat, 2 * k).unwrap())
}

fn random_field(grid: &SphericalGrid, batch: usize, channels: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::from_fn(grid, batch, channels, |_, _, _, _| rng.random_range(-2.0..2.0))
}

fn sphere_point() -> impl Strategy<Value = (f64, f64)> {
    (0.0..=PI, 0.0..2.0 * PI)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn global_attention_commutes_with_longitude_roll(grid in small_grid(), shift in -12isize..12, seed: u64) {
        let cfg = AttentionConfig::new(2, 2).unwrap();
        let (q, k, v) = (random_field(&grid, 1, 4, seed), random_field(&grid, 1, 4, seed ^ 1), random_field(&grid, 1, 2, seed ^ 2));
        let rolled = s2_attention_forward(&q.roll_lon(shift), &k.roll_lon(shift), &v.roll_lon(shift), &grid, &cfg).unwrap();
        let expect = s2_attention_forward(&q, &k, &v, &grid, &cfg).unwrap().roll_lon(shift);
        prop_assert!(rolled.max_abs_diff(&expect) <= 1e-12);
    }

    #[test]
    fn neighborhood_forward_and_backward_commute_with_roll(
        grid in small_grid(),
        cutoff in 0.2..PI,
        shift in -12isize..12,
        seed: u64,
    ) {
        let cfg = AttentionConfig::new(1, 3).unwrap();
        let map = NeighborhoodMap::build(&grid, cutoff).unwrap();
        let (q, k, v, dy) = (
            random_field(&grid, 2, 3, seed),
            random_field(&grid, 2, 3, seed ^ 1),
            random_field(&grid, 2, 2, seed ^ 2),
            random_field(&grid, 2, 2, seed ^ 3),
        );
        let r = |f: &Field| f.roll_lon(shift);
        let y = neighborhood_attention_forward(&r(&q), &r(&k), &r(&v), &map, &grid, &cfg).unwrap();
        let y0 = neighborhood_attention_forward(&q, &k, &v, &map, &grid, &cfg).unwrap();
        prop_assert!(y.max_abs_diff(&r(&y0)) <= 1e-12);
        let g = neighborhood_attention_backward(&r(&q), &r(&k), &r(&v), &r(&dy), &map, &grid, &cfg).unwrap();
        let g0 = neighborhood_attention_backward(&q, &k, &v, &dy, &map, &grid, &cfg).unwrap();
        prop_assert!(g.dq.max_abs_diff(&r(&g0.dq)) <= 1e-12);
        prop_assert!(g.dk.max_abs_diff(&r(&g0.dk)) <= 1e-12);
        prop_assert!(g.dv.max_abs_diff(&r(&g0.dv)) <= 1e-12);
    }

    #[test]
    fn attention_weights_are_a_partition_of_unity(grid in small_grid(), cutoff in 0.05..PI, seed: u64, query_frac in 0.0..1.0) {
        let cfg = AttentionConfig::new(1, 2).unwrap();
        let (q, k) = (random_field(&grid, 1, 2, seed), random_field(&grid, 1, 2, seed ^ 7));
        let query = ((query_frac * grid.num_points() as f64) as usize).min(grid.num_points() - 1);
        let global: f64 = global_attention_weights(&q, &k, &grid, &cfg, 0, 0, query).unwrap().iter().sum();
        prop_assert!((global - 1.0).abs() <= 1e-12);
        let map = NeighborhoodMap::build(&grid, cutoff).unwrap();
        let local = neighborhood_attention_weights(&q, &k, &map, &grid, &cfg, 0, 0, query).unwrap();
        // a query whose whole disk has zero weight (equiangular pole, tiny cutoff) gets all-zero weights
        if local.iter().any(|&(_, w)| w != 0.0) {
            let s: f64 = local.iter().map(|p| p.1).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn neighborhoods_match_brute_force_membership(grid in small_grid(), cutoff in 0.05..PI) {
        let map = NeighborhoodMap::build(&grid, cutoff).unwrap();
        let (nlat, nlon) = (grid.nlat(), grid.nlon());
        let (th, ph) = (grid.colatitudes(), grid.longitudes());
        for i in 0..nlat {
            for w in 0..nlon {
                let mut got: Vec<usize> = map.neighbors_of(i, w).collect();
                got.sort_unstable();
                let expect: Vec<usize> = (0..nlat * nlon)
                    .filter(|&j| geodesic_distance(th[i], ph[w], th[j / nlon], ph[j % nlon]) <= cutoff)
                    .collect();
                prop_assert_eq!(got, expect, "query ({}, {})", i, w);
            }
        }
    }

    #[test]
    fn geodesic_distance_is_a_metric(a in sphere_point(), b in sphere_point(), c in sphere_point()) {
        let d = |x: (f64, f64), y: (f64, f64)| geodesic_distance(x.0, x.1, y.0, y.1);
        let ab = d(a, b);
        prop_assert!((0.0..=PI).contains(&ab));
        prop_assert_eq!(ab, d(b, a));
        prop_assert!(d(a, c) <= ab + d(b, c) + 1e-12);
    }

    #[test]
    fn rotations_preserve_distance(a in sphere_point(), b in sphere_point(), seed: u64) {
        let r = Rotation::random(&mut ChaCha8Rng::seed_from_u64(seed));
        let (pa, pb) = (to_cartesian(a.0, a.1), to_cartesian(b.0, b.1));
        let before = geodesic_distance_vec(pa, pb);
        let after = geodesic_distance_vec(r.apply(pa), r.apply(pb));
        prop_assert!((before - after).abs() <= 1e-12);
    }

    #[test]
    fn losses_are_roll_invariant_and_nonnegative(grid in small_grid(), shift in -12isize..12, seed: u64) {
        let w = PointWeights::new(&grid);
        let (u, t) = (random_field(&grid, 2, 2, seed), random_field(&grid, 2, 2, seed ^ 5));
        let (ur, tr) = (u.roll_lon(shift), t.roll_lon(shift));
        let pairs: [(f64, f64); 3] = [
            (l1_distance(&u, &t, &w).unwrap(), l1_distance(&ur, &tr, &w).unwrap()),
            (l2_distance_sq(&u, &t, &w).unwrap(), l2_distance_sq(&ur, &tr, &w).unwrap()),
            (sobolev_w11_seminorm(&u, &t, &grid, &w).unwrap(), sobolev_w11_seminorm(&ur, &tr, &grid, &w).unwrap()),
        ];
        for (a, b) in pairs {
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert_eq!(l1_distance(&u, &u, &w).unwrap(), 0.0);

        let truth = ClassMask::argmax(&t);
        let ce = cross_entropy(&u, &truth, &w).unwrap();
        prop_assert!((ce - cross_entropy(&ur, &truth.roll_lon(shift), &w).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn confusion_fractions_partition_the_sphere(grid in small_grid(), classes in 2usize..6, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.num_points();
        let mut labels = |_: ()| (0..n).map(|_| rng.random_range(0..classes)).collect::<Vec<_>>();
        let pred = ClassMask::from_labels(&grid, 1, classes, labels(())).unwrap();
        let truth = ClassMask::from_labels(&grid, 1, classes, labels(())).unwrap();
        for c in confusion_fractions(&pred, &truth, &PointWeights::new(&grid)).unwrap() {
            prop_assert!((c.total() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn field_files_round_trip_bitwise(grid in small_grid(), bits in prop::collection::vec(any::<u64>(), 1..4)) {
        let values: Vec<f64> = (0..grid.num_points() * bits.len())
            .map(|i| f64::from_bits(bits[i % bits.len()].rotate_left(i as u32)))
            .collect();
        let f = Field::from_vec(&grid, 1, bits.len(), values).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let back = read_field(&mut buf.as_slice()).unwrap();
        let raw = |f: &Field| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(raw(&back), raw(&f));
    }

    #[test]
    fn mlp_commutes_with_point_permutations(grid in small_grid(), seed: u64) {
        let p = BlockParams::random(4, 2, 2.0, AttentionMode::Global, seed).unwrap();
        let x = random_field(&grid, 1, 4, seed);
        let n = grid.num_points();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 11);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permute = |f: &Field| {
            let mut out = f.clone();
            for c in 0..f.channels() {
                let src = f.plane(0, c).to_vec();
                for (dst, &s) in out.plane_mut(0, c).iter_mut().zip(&perm) {
                    *dst = src[s];
                }
            }
            out
        };
        let a = mlp_forward(&permute(&x), &p).unwrap();
        let b = permute(&mlp_forward(&x, &p).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn block_commutes_with_roll_when_embedding_rolls_too(grid in small_grid(), shift in -12isize..12, seed: u64, local: bool) {
        let mode = if local { AttentionMode::Neighborhood { theta_cutoff: 0.9 } } else { AttentionMode::Global };
        let map = local.then(|| NeighborhoodMap::build(&grid, 0.9).unwrap());
        let p = BlockParams::random(4, 2, 4.0, mode, seed).unwrap();
        let x = random_field(&grid, 2, 4, seed);
        let pos = spectral_position_embedding(&grid, 4).unwrap();
        let a = block_forward(&x.roll_lon(shift), &p, Some(&pos.roll_lon(shift)), &grid, map.as_ref()).unwrap();
        let b = block_forward(&x, &p, Some(&pos), &grid, map.as_ref()).unwrap().roll_lon(shift);
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn instance_norm_standardizes(grid in small_grid(), seed: u64, scale in 0.1..10.0, offset in -5.0..5.0) {
        let x = random_field(&grid, 1, 2, seed).map(|v| scale * v + offset);
        let y = instance_norm(&x, &grid, 1e-12).unwrap();
        let w = grid.point_weights();
        let total: f64 = w.iter().sum();
        for c in 0..2 {
            let p = y.plane(0, c);
            let mean = p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
            let var = p.iter().zip(&w).map(|(a, b)| a * a * b).sum::<f64>() / total;
            prop_assert!(mean.abs() <= 1e-12);
            prop_assert!((var - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn pairwise_accumulate_matches_componentwise_sums(values in prop::collection::vec(-1e3..1e3f64, 0..200)) {
        let n = values.len() / 2;
        let mut out = [0.0; 2];
        let mut scratch = Vec::new();
        pairwise_accumulate(n, 2, &mut out, &mut scratch, |j, acc| {
            acc[0] += values[2 * j];
            acc[1] += values[2 * j + 1];
        });
        let even: Vec<f64> = (0..n).map(|j| values[2 * j]).collect();
        let odd: Vec<f64> = (0..n).map(|j| values[2 * j + 1]).collect();
        prop_assert_eq!(out, [pairwise_sum(&even), pairwise_sum(&odd)]);
    }
}

#[test]
fn block_with_fixed_zonal_embedding_commutes_with_roll() {
    // m = 0 harmonics do not depend on longitude, so a held-fixed embedding
    // built only from them still commutes with rolls.
    let grid = SphericalGrid::gaussian(6, 12).unwrap();
    let full = spectral_position_embedding(&grid, 16).unwrap();
    let zonal_channels = [0usize, 2, 6, 12];
    let mut pos = Field::zeros(&grid, 1, 4);
    for (c, &k) in zonal_channels.iter().enumerate() {
        pos.plane_mut(0, c).copy_from_slice(full.plane(0, k));
    }
    let p = BlockParams::random(4, 1, 4.0, AttentionMode::Global, 3).unwrap();
    let x = random_field(&grid, 1, 4, 8);
    for shift in [1, 5, -3] {
        let a = block_forward(&x.roll_lon(shift), &p, Some(&pos), &grid, None).unwrap();
        let b = block_forward(&x, &p, Some(&pos), &grid, None).unwrap().roll_lon(shift);
        assert!(a.max_abs_diff(&b) <= 1e-12);
    }
}
