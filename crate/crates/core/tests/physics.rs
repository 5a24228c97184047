use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use paramux::measurement::{
    assemble_forward, assemble_noise_covariance, conversion_matrix, sensor_matrix, simulate_measurement,
    MeasurementModel, SensorLayout, SensorModel,
};
use paramux::optics::{critical_lengths, gain_map, transfer_matrix, transfer_matrix_axial};
use paramux::stats::{mean_photon_numbers, pixel_covariance_matrix, photon_variances, scale_ratio, ResponseMap};
use paramux::{Arm, CrystalParams, Dims, Image, ObjectImage, OpticalGeometry, StatsOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn crystal(eps: f64, bz: f64) -> CrystalParams {
    CrystalParams::from_dimensionless(100.0, eps, bz).unwrap()
}

fn random_object(dims: Dims, n: f64, seed: u64) -> ObjectImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.len()).map(|_| rng.random::<f64>()).collect();
    ObjectImage::new(Image::new(dims, data).unwrap(), n).unwrap()
}

#[test]
fn axial_transfer_matches_numeric_exponential() {
    let geom = OpticalGeometry::default();
    for (eps, bz) in [(0.4, 1.0), (0.8, 2.0), (0.3, 4.5)] {
        let c = crystal(eps, bz);
        let num = transfer_matrix(0.0, c.length_z(), &c, &geom).unwrap();
        let ana = transfer_matrix_axial(&c, c.length_z()).unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                assert!((num.element(i, j) - ana.element(i, j)).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn transfer_preserves_commutators_off_axis() {
    let geom = OpticalGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let c = crystal(rng.random_range(0.05..0.95), rng.random_range(0.0..5.0));
        let q = rng.random_range(0.0..2e5);
        let t = transfer_matrix(q, c.length_z(), &c, &geom).unwrap();
        assert!(t.commutator_defect() < 1e-10);
    }
}

#[test]
fn no_coupling_keeps_the_signal_in_the_third_arm() {
    let t = transfer_matrix_axial(&CrystalParams::new(100.0, 0.0, 0.013).unwrap(), 0.013).unwrap();
    assert!((t.element(3, 3) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    assert!(t.element(1, 3).norm() < 1e-12);
    assert!((t.element(1, 2) - Complex64::new(0.0, 1.3f64.sinh())).norm() < 1e-12);
}

#[test]
fn gain_vanishes_then_recovers() {
    let c = crystal(0.4, 1.0);
    let lengths = critical_lengths(&c).unwrap();
    assert!(lengths.zm > lengths.z0);
    let g = |z: f64| transfer_matrix_axial(&c, z).unwrap().gain(3, 3);
    assert!(g(lengths.z0) < 1e-12);
    assert!((g(lengths.zm) - 1.0).abs() < 1e-9);

    let map = gain_map(&[0.4], &[0.0, c.beta() * lengths.z0]).unwrap();
    assert_eq!(map.gain[0][0], 1.0);
    assert!(map.gain[0][1] < 1e-12);
    assert!((map.beta_z0[0] - c.beta() * lengths.z0).abs() < 1e-12);
}

#[test]
fn scale_ratios_follow_wavelengths() {
    let geom = OpticalGeometry::default();
    assert!((scale_ratio(Arm::One, &geom).unwrap() - 8.0 / 3.0).abs() < 1e-12);
    assert!((scale_ratio(Arm::Two, &geom).unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn statistics_scale_with_photon_number_and_stay_psd() {
    let geom = OpticalGeometry::default();
    let dims = Dims::square(6).unwrap();
    let obj = random_object(dims, 10.0, 1);
    let twice = obj.with_photons(20.0).unwrap();
    for (eps, bz) in [(0.4, 1.0), (0.8, 2.0), (0.4, 5.0)] {
        let c = crystal(eps, bz);
        let opts = StatsOptions::default();
        let a = pixel_covariance_matrix(&obj, &geom, &c, opts).unwrap();
        let b = pixel_covariance_matrix(&twice, &geom, &c, opts).unwrap();
        let var = photon_variances(&obj, &geom, &c, opts).unwrap();
        for p in 0..dims.len() {
            let m = a.covariance[p];
            let tr = m.trace();
            assert!(m.symmetric_eigenvalues().min() >= -1e-9 * tr);
            assert!(((b.covariance[p] - m * 2.0).norm()) <= 1e-12 * m.norm().max(1e-300) * 2.0);
            for k in 0..3 {
                assert!((m[(k, k)] - var.arms[k][p]).abs() <= 1e-12 * m[(k, k)].abs().max(1.0));
            }
        }
    }
}

#[test]
fn dark_object_produces_no_photons() {
    let dims = Dims::square(4).unwrap();
    let obj = ObjectImage::new(Image::filled(dims, 0.0), 10.0).unwrap();
    let m = mean_photon_numbers(&obj, &OpticalGeometry::default(), &crystal(0.4, 1.0), StatsOptions::default()).unwrap();
    assert!(m.arms.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn windowed_sensor_rows_count_covered_pixels() {
    let s = SensorModel::new(3, 1, 0, 1.0).unwrap();
    let b = sensor_matrix(&s, Dims::new(5, 1).unwrap()).unwrap();
    let expected = DMatrix::from_row_slice(
        5,
        5,
        &[
            1., 1., 0., 0., 0., //
            1., 1., 1., 0., 0., //
            0., 1., 1., 1., 0., //
            0., 0., 1., 1., 1., //
            0., 0., 0., 1., 1.,
        ],
    );
    assert_eq!(b, expected);
}

#[test]
fn forward_operator_matches_model_and_noise_matches_monte_carlo() {
    let geom = OpticalGeometry::default();
    let c = crystal(0.4, 1.0);
    let dims = Dims::square(4).unwrap();
    let opts = StatsOptions::default();
    let layout = SensorLayout::overlapping();
    let map = ResponseMap::new(dims, &geom, &c, opts).unwrap();
    let model = MeasurementModel::new(&layout, map.clone(), [0.0; 3], 10.0).unwrap();

    let b: Vec<_> = Arm::ALL.iter().map(|&a| sensor_matrix(layout.arm(a), dims).unwrap()).collect();
    let cm: Vec<_> = Arm::ALL
        .iter()
        .map(|&a| conversion_matrix(a, dims, &geom, &c, opts).unwrap())
        .collect();
    let a = assemble_forward(&b, &cm).unwrap();
    let g: Vec<f64> = (0..dims.len()).map(|p| 10.0 * (p % 3) as f64 / 2.0).collect();
    let ag = &a * DVector::from_column_slice(&g);
    let fwd = model.forward(&g).unwrap();
    assert!(ag.iter().zip(&fwd).all(|(x, y)| (x - y).abs() < 1e-9 * x.abs().max(1.0)));

    let sigma = assemble_noise_covariance(&g, &b, &Arm::ALL, &map, None).unwrap();
    let draws = 20_000;
    let mut emp = DMatrix::zeros(a.nrows(), a.nrows());
    let gv = DVector::from_column_slice(&g);
    for seed in 0..draws {
        let d = simulate_measurement(&gv, &a, &sigma, seed).unwrap() - &ag;
        emp += &d * d.transpose();
    }
    emp /= draws as f64;
    let rel = (&emp - &sigma).norm() / sigma.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
}
