//! Independent reference implementations checked against the library.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use xlmimo::chanest::PilotMap;
use xlmimo::channel::{
    complex_normal, generate_channel, steering_vector, ArrayGeometry, ChannelTensor, ClusterSpec,
    GenerationOptions, RayParams, VisibilityMask, SPEED_OF_LIGHT,
};
use xlmimo::constellation::Constellation;
use xlmimo::linalg::{self, CMat};
use xlmimo::linksim::{self, ArrayConfig, ChannelModel, CsiMode, Scenario, Setup, SweepAxis};
use xlmimo::metrics;
use xlmimo::mimo::{self, Scheme};
use xlmimo::numerology::Numerology;
use xlmimo::ofdm::{OfdmModem, ResourceGrid};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn small_numerology() -> Numerology {
    Numerology::new(60e3, 256, 192, 15.36e6).unwrap()
}

fn small_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.numerology = linksim::NumerologyConfig {
        scs_hz: 60e3,
        fft_size: 256,
        n_data_sc: 192,
        sample_rate_hz: 15.36e6,
    };
    s.array = ArrayConfig { rows: 2, cols: 8 };
    s.users = 4;
    s.constellations = vec![Constellation::Qam16];
    s.seed = 21;
    s
}

/// Element positions rebuilt from the array definition.
fn upa_positions(rows: usize, cols: usize, f: f64) -> Vec<[f64; 3]> {
    let d = SPEED_OF_LIGHT / f / 2.0;
    let mut out = Vec::new();
    for r in 0..rows {
        for col in 0..cols {
            let y = (col as f64 - (cols as f64 - 1.0) / 2.0) * d;
            let z = (r as f64 - (rows as f64 - 1.0) / 2.0) * d;
            out.push([0.0, y, z]);
        }
    }
    out
}

fn distance(ray: &RayParams, p: &[f64; 3]) -> f64 {
    let src = [
        ray.r_m * ray.phi_rad.cos() * ray.theta_rad.cos(),
        ray.r_m * ray.phi_rad.cos() * ray.theta_rad.sin(),
        -ray.r_m * ray.phi_rad.sin(),
    ];
    ((src[0] - p[0]).powi(2) + (src[1] - p[1]).powi(2) + (src[2] - p[2]).powi(2)).sqrt()
}

#[test]
fn steering_vector_matches_brute_force() {
    let f = 6.8e9;
    let geo = ArrayGeometry::upa(3, 5, f).unwrap();
    let pos = upa_positions(3, 5, f);
    let ray = RayParams::new(4.2, 0.4, -0.15, c(1.0, 0.0));
    for m in [-7i64, 0, 12] {
        let b = steering_vector(&geo, &ray, m, f, 60e3).unwrap();
        let freq = f + m as f64 * 60e3;
        for (n, p) in pos.iter().enumerate() {
            let want = Complex64::cis(2.0 * PI * freq * distance(&ray, p) / SPEED_OF_LIGHT);
            assert!((b[n] - want).norm() < 1e-9, "m {m} n {n}");
        }
    }
}

#[test]
fn channel_matches_triple_loop() {
    let num = small_numerology();
    let f_c = 6.8e9;
    let geo = ArrayGeometry::upa(2, 4, f_c).unwrap();
    let pos = upa_positions(2, 4, f_c);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut users = Vec::new();
    for _ in 0..3 {
        let clusters: Vec<ClusterSpec> = (0..2)
            .map(|_| {
                let rays = (0..3)
                    .map(|_| RayParams {
                        r_m: rng.random_range(2.0..20.0),
                        theta_rad: rng.random_range(-1.0..1.0),
                        phi_rad: rng.random_range(-0.2..0.2),
                        gain: complex_normal(&mut rng, 1.0),
                        delay_s: rng.random_range(0.0..50e-9),
                        doppler_hz: rng.random_range(-100.0..100.0),
                    })
                    .collect();
                let weights = (0..8)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
                    .collect();
                ClusterSpec {
                    rays,
                    visibility: VisibilityMask::from_weights(weights).unwrap(),
                }
            })
            .collect();
        users.push(clusters);
    }
    for options in [
        GenerationOptions {
            time_s: 0.0,
            flat: false,
        },
        GenerationOptions {
            time_s: 1.3e-3,
            flat: false,
        },
        GenerationOptions {
            time_s: 0.0,
            flat: true,
        },
    ] {
        let h = generate_channel(&geo, &users, &num, f_c, options).unwrap();
        let mut worst: f64 = 0.0;
        for m in 0..num.n_data_sc {
            let bin = if options.flat {
                0
            } else {
                num.subcarrier_offset(m)
            };
            let freq = f_c + bin as f64 * num.scs_hz;
            for (n, p) in pos.iter().enumerate() {
                for (k, clusters) in users.iter().enumerate() {
                    let mut acc = c(0.0, 0.0);
                    for cl in clusters {
                        let mut sum = c(0.0, 0.0);
                        for ray in &cl.rays {
                            let alpha = ray.gain
                                * Complex64::cis(-2.0 * PI * freq * ray.delay_s)
                                * Complex64::cis(2.0 * PI * ray.doppler_hz * options.time_s);
                            sum += alpha
                                * Complex64::cis(
                                    2.0 * PI * freq * distance(ray, p) / SPEED_OF_LIGHT,
                                );
                        }
                        acc += sum * cl.visibility.weights[n];
                    }
                    worst = worst.max((h.get(m, n, k) - acc).norm());
                }
            }
        }
        assert!(worst < 1e-9, "{options:?}: {worst}");
    }
}

#[test]
fn modulator_matches_naive_idft() {
    let num = small_numerology();
    let modem = OfdmModem::new(&num);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Complex64> = (0..num.n_data_sc)
        .map(|_| complex_normal(&mut rng, 1.0))
        .collect();
    let body = modem.symbol_body(&x);
    let n = num.fft_size as f64;
    for (t, v) in body.iter().enumerate() {
        let mut want = c(0.0, 0.0);
        for (j, xj) in x.iter().enumerate() {
            let k = num.subcarrier_offset(j) as f64;
            want += xj * Complex64::cis(2.0 * PI * k * t as f64 / n);
        }
        want /= n.sqrt();
        assert!((v - want).norm() < 1e-10, "sample {t}");
    }
}

#[test]
fn circular_shift_gives_phase_ramp() {
    let num = small_numerology();
    let modem = OfdmModem::new(&num);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Complex64> = (0..num.n_data_sc)
        .map(|_| complex_normal(&mut rng, 1.0))
        .collect();
    let body = modem.symbol_body(&x);
    let shift = 9;
    let n = num.fft_size;
    let shifted: Vec<Complex64> = (0..n).map(|t| body[(t + n - shift) % n]).collect();
    // naive DFT of the shifted body at each data bin
    for (j, xj) in x.iter().enumerate() {
        let k = num.subcarrier_offset(j) as f64;
        let mut y = c(0.0, 0.0);
        for (t, v) in shifted.iter().enumerate() {
            y += v * Complex64::cis(-2.0 * PI * k * t as f64 / n as f64);
        }
        y /= (n as f64).sqrt();
        let want = xj * Complex64::cis(-2.0 * PI * k * shift as f64 / n as f64);
        assert!((y - want).norm() < 1e-10);
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[r][k] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![c(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    x
}

/// Naive LS estimate plus ZF/LMMSE detection from the received grid.
fn brute_force_detect(
    setup: &Setup,
    rx: &ResourceGrid,
    pilot: usize,
    data: &[usize],
    scheme: Scheme,
) -> ResourceGrid {
    let (n, k, n_sc) = (setup.n_elements(), setup.n_users(), setup.n_sc());
    let mut out = ResourceGrid::zeros(n_sc, data.len(), k);
    for m in 0..n_sc {
        let i = m / k;
        // estimate: column u from subcarrier iK + u
        let h: Vec<Vec<Complex64>> = (0..n)
            .map(|r| {
                (0..k)
                    .map(|u| {
                        let x = setup.ul_pilots.get(i, u);
                        rx.get(r, pilot, i * k + u) * x.conj() / x.norm_sqr()
                    })
                    .collect()
            })
            .collect();
        let mut gram = vec![vec![c(0.0, 0.0); k]; k];
        for a in 0..k {
            for b in 0..k {
                for r in 0..n {
                    gram[a][b] += h[r][a].conj() * h[r][b];
                }
            }
            if scheme == Scheme::Lmmse {
                gram[a][a] += setup.filter_noise_var;
            }
        }
        for (j, &t) in data.iter().enumerate() {
            let rhs: Vec<Complex64> = (0..k)
                .map(|a| (0..n).map(|r| h[r][a].conj() * rx.get(r, t, m)).sum())
                .collect();
            let s = gauss_solve(gram.clone(), rhs);
            for u in 0..k {
                out.set(u, j, m, s[u]);
            }
        }
    }
    out
}

#[test]
fn uplink_matches_brute_force_reference() {
    for scheme in [Scheme::Zf, Scheme::Lmmse] {
        // noise free: the received grid itself is checked
        let mut s = small_scenario();
        s.scheme = scheme;
        let setup = Setup::new(&s).unwrap();
        let slot = linksim::uplink_slot(&setup, 0).unwrap();
        let amp = s.p_ul.sqrt();
        for m in 0..setup.n_sc() {
            for t in 0..slot.layout.n_symbols {
                for r in 0..setup.n_elements() {
                    let mut y = c(0.0, 0.0);
                    for u in 0..setup.n_users() {
                        y += setup.channel.get(m, r, u) * slot.tx.get(u, t, m) * amp;
                    }
                    assert!((slot.rx.get(r, t, m) - y).norm() < 1e-10);
                }
            }
        }

        // noisy and sharded: detection from the same observation
        let mut s = small_scenario();
        s.scheme = scheme;
        s.snr_db = Some(15.0);
        s.processors = 2;
        let setup = Setup::new(&s).unwrap();
        let slot = linksim::uplink_slot(&setup, 1).unwrap();
        let want = brute_force_detect(
            &setup,
            &slot.rx,
            slot.layout.pilot,
            &slot.layout.data,
            scheme,
        );
        let worst = slot
            .detected
            .data
            .iter()
            .zip(&want.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "{scheme}: {worst}");
    }
}

fn q(x: f64) -> f64 {
    1.0 - Normal::new(0.0, 1.0).unwrap().cdf(x)
}

#[test]
fn qpsk_ser_matches_q_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let qpsk = Constellation::Qpsk;
    let n = 200_000;
    for noise_var in [0.25, 0.5] {
        let idx = qpsk.random_indices(&mut rng, n);
        let reference: Vec<Complex64> = idx.iter().map(|&i| qpsk.map(i)).collect();
        let detected: Vec<Complex64> = reference
            .iter()
            .map(|x| x + complex_normal(&mut rng, noise_var))
            .collect();
        let m = metrics::evm_ser(&detected, &reference, qpsk).unwrap();
        let p = q(1.0 / noise_var.sqrt());
        let ser = 1.0 - (1.0 - p) * (1.0 - p);
        let sigma = (ser * (1.0 - ser) / n as f64).sqrt();
        assert!(
            (m.ser - ser).abs() < 3.0 * sigma,
            "{noise_var}: {} vs {ser}",
            m.ser
        );
        assert!((m.evm_rms - noise_var.sqrt()).abs() < 0.01);
    }
}

#[test]
fn pure_noise_ser_limit() {
    for (con, order) in [(Constellation::Qpsk, 4.0), (Constellation::Qam16, 16.0)] {
        let mut s = small_scenario();
        s.constellations = vec![con];
        s.noise_var = Some(1e8);
        s.slots = 4;
        let run = linksim::run_uplink(&s).unwrap();
        let symbols: usize = run.report.per_user.iter().map(|u| u.symbols).sum();
        let want = (order - 1.0) / order;
        let sigma = (want * (1.0 - want) / symbols as f64).sqrt();
        assert!(
            (run.report.mean_ser - want).abs() < 4.0 * sigma,
            "{con:?}: {}",
            run.report.mean_ser
        );
    }
}

#[test]
fn qr_lmmse_beats_explicit_inverse_when_ill_conditioned() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, k) = (64, 12);
    let random_unitary = |rng: &mut ChaCha8Rng, dim: usize| {
        let a = CMat::from_fn(dim, dim, |_, _| complex_normal(rng, 1.0));
        linalg::HouseholderQr::new(&a).unwrap().thin_q()
    };
    for _ in 0..20 {
        let u = random_unitary(&mut rng, n).columns(0, k).into_owned();
        let v = random_unitary(&mut rng, k);
        let sv: Vec<f64> = (0..k)
            .map(|i| 10f64.powf(-6.0 * i as f64 / (k - 1) as f64))
            .collect();
        let sigma = CMat::from_fn(
            k,
            k,
            |i, j| if i == j { c(sv[i], 0.0) } else { c(0.0, 0.0) },
        );
        let h = &u * &sigma * v.adjoint();
        let noise_var = 1e-14;
        let coeffs = CMat::from_fn(k, 1, |_, _| complex_normal(&mut rng, 1.0));
        let y = &u * &coeffs;
        // exact: V (S^2 + s2)^-1 S c
        let shrink = CMat::from_fn(k, k, |i, j| {
            if i == j {
                c(sv[i] / (sv[i] * sv[i] + noise_var), 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let exact = &v * shrink * &coeffs;
        let qr = mimo::qr_lmmse_solve(&h, noise_var, &y).unwrap();
        let hh = h.adjoint();
        let gram = &hh * &h + CMat::identity(k, k) * c(noise_var, 0.0);
        let explicit = linalg::inverse(&gram).unwrap() * hh * &y;
        let e_qr = linalg::relative_error(&qr, &exact);
        let e_inv = linalg::relative_error(&explicit, &exact);
        assert!(e_qr < 1e-6, "qr error {e_qr}");
        assert!(e_qr <= e_inv, "qr {e_qr} vs inverse {e_inv}");
    }
}

#[test]
fn downlink_mr_array_gain() {
    let mut s = small_scenario();
    s.array = ArrayConfig { rows: 4, cols: 16 };
    s.users = 1;
    s.scheme = Scheme::Mr;
    s.csi = CsiMode::Perfect;
    s.channel = ChannelModel::Iid {
        coherence_subcarriers: 1,
    };
    s.normalize_channel = false;
    s.snr_db = Some(0.0);
    let mut gains = Vec::new();
    for seed in 0..10 {
        s.seed = seed;
        let setup = Setup::new(&s).unwrap();
        let run = linksim::run_downlink_with(&setup).unwrap();
        let single = s.p_dl * setup.channel.user_power()[0];
        gains.push(run.report.per_user[0].signal_power / single);
    }
    let gain_db = 10.0 * (gains.iter().sum::<f64>() / gains.len() as f64).log10();
    let want = 10.0 * 64f64.log10();
    assert!((gain_db - want).abs() < 0.5, "{gain_db} dB vs {want} dB");
}

#[test]
fn downlink_energy_bookkeeping() {
    let mut s = small_scenario();
    s.scheme = Scheme::Lmmse;
    s.csi = CsiMode::Estimated;
    s.calibration_error_rad = 0.1;
    s.channel = ChannelModel::default();
    let setup = Setup::new(&s).unwrap();
    let run = linksim::run_downlink_with(&setup).unwrap();
    let h_dl = linksim::downlink_channel(&setup);
    let layout = setup
        .slot_layout(xlmimo::numerology::Direction::Downlink)
        .unwrap();
    for u in 0..setup.n_users() {
        let mut power = 0.0;
        for (m, h) in h_dl.iter().enumerate() {
            for j in 0..layout.data.len() {
                let mut y = c(0.0, 0.0);
                for (ku, f) in (0..setup.n_users()).map(|ku| (ku, &run.precoder.matrices[m])) {
                    for n in 0..setup.n_elements() {
                        y += h[(u, n)] * f[(n, ku)] * run.reference.get(ku, j, m);
                    }
                }
                power += y.norm_sqr();
            }
        }
        power /= (setup.n_sc() * layout.data.len()) as f64;
        let got = run.report.per_user[u].received_power;
        assert!(
            (got - power).abs() <= 1e-9 * power,
            "user {u}: {got} vs {power}"
        );
    }
}

#[test]
fn time_and_frequency_paths_agree_on_flat_channel() {
    let mut s = small_scenario();
    s.channel = ChannelModel::Geometric {
        layout: Default::default(),
        users: None,
        options: GenerationOptions {
            time_s: 0.0,
            flat: true,
        },
    };
    let freq = linksim::uplink_slot(&Setup::new(&s).unwrap(), 0).unwrap();
    s.time_domain = true;
    let time = linksim::uplink_slot(&Setup::new(&s).unwrap(), 0).unwrap();
    let diff = |a: &ResourceGrid, b: &ResourceGrid| {
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    };
    assert!(diff(&freq.rx, &time.rx) < 1e-9);
    assert!(diff(&freq.detected, &time.detected) < 1e-9);
}

#[test]
fn distributed_flag_changes_nothing() {
    for scheme in [Scheme::Mr, Scheme::Zf, Scheme::Lmmse] {
        let mut s = small_scenario();
        s.scheme = scheme;
        s.snr_db = Some(8.0);
        s.channel = ChannelModel::default();
        let a = linksim::run_uplink(&s).unwrap();
        let da = linksim::run_downlink(&s).unwrap();
        for p in [2, 3, 4] {
            s.processors = p;
            let b = linksim::run_uplink(&s).unwrap();
            let db = linksim::run_downlink(&s).unwrap();
            assert_eq!(a.detected, b.detected, "{scheme} P={p}");
            assert_eq!(da.equalized, db.equalized, "{scheme} P={p}");
            assert_eq!(da.transmitted, db.transmitted, "{scheme} P={p}");
            assert!(b.report.exchange.is_some());
        }
    }
}

#[test]
fn snr_sweep_is_monotone() {
    let mut s = small_scenario();
    s.constellations = vec![Constellation::Qpsk];
    s.channel = ChannelModel::Iid {
        coherence_subcarriers: 4,
    };
    let values: Vec<String> = [-5, 0, 5, 10, 15].iter().map(|v| v.to_string()).collect();
    let rows = linksim::run_sweep(&s, SweepAxis::Snr, &values).unwrap();
    let symbols: usize = 4 * 11 * 192;
    assert!(symbols >= 1000);
    for w in rows.windows(2) {
        assert!(
            w[1].mean_ser <= w[0].mean_ser,
            "{} -> {}",
            w[0].mean_ser,
            w[1].mean_ser
        );
    }
    assert!(rows[0].mean_ser > 0.0);
}

#[test]
fn single_value_sweep_matches_direct_run() {
    let mut s = small_scenario();
    s.snr_db = Some(12.0);
    let rows = linksim::run_sweep(&s, SweepAxis::Scheme, &["lmmse".to_string()]).unwrap();
    s.scheme = Scheme::Lmmse;
    let direct = linksim::run_uplink(&s).unwrap();
    assert_eq!(rows[0].mean_ser, direct.report.mean_ser);
    assert_eq!(rows[0].mean_evm, direct.report.mean_evm);
}

#[test]
fn element_sweep_orders_spread() {
    let mut s = small_scenario();
    s.channel = ChannelModel::Iid {
        coherence_subcarriers: 1,
    };
    s.scheme = Scheme::Lmmse;
    s.snr_db = Some(20.0);
    let values: Vec<String> = ["4", "16", "64"].iter().map(|v| v.to_string()).collect();
    let rows = linksim::run_sweep(&s, SweepAxis::N, &values).unwrap();
    assert_eq!(rows[2].elements, 64);
    assert!(rows[2].median_spread < rows[1].median_spread);
    assert!(rows[1].median_spread < rows[0].median_spread);
}

#[test]
fn mixed_constellations_report_every_user() {
    let mut s = small_scenario();
    s.users = 8;
    s.array = ArrayConfig { rows: 2, cols: 16 };
    s.snr_db = Some(30.0);
    s.constellations = [
        [Constellation::Qam256; 5].as_slice(),
        &[
            Constellation::Qam16,
            Constellation::Qam16,
            Constellation::Qpsk,
        ],
    ]
    .concat();
    let run = linksim::run_downlink(&s).unwrap();
    assert_eq!(run.report.per_user.len(), 8);
    assert_eq!(run.report.per_user[7].constellation, Constellation::Qpsk);
    assert!(run
        .report
        .per_user
        .iter()
        .all(|u| u.evm_rms.is_finite() && u.symbols > 0));
}

#[test]
fn far_field_profile_is_flat() {
    let num = small_numerology();
    let geo = ArrayGeometry::ula(32, 6.8e9).unwrap();
    let ray = RayParams::new(5e3, 0.2, 0.0, c(1.0, 0.0));
    let cluster = ClusterSpec {
        rays: vec![ray],
        visibility: VisibilityMask::all_ones(32),
    };
    let h = generate_channel(
        &geo,
        &[vec![cluster]],
        &num,
        6.8e9,
        GenerationOptions::default(),
    )
    .unwrap();
    let db = metrics::profile_db(&metrics::element_power_profile(&h, 0).unwrap());
    assert!(db.iter().all(|v| *v > -0.5));
}

#[test]
fn ls_variance_scales_with_pilot_power() {
    let (n, k, n_sc) = (4, 2, 16);
    let map = PilotMap::new(k, n_sc).unwrap();
    let pilots = xlmimo::chanest::PilotSymbols::random_qpsk(&map, 1).scaled(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise_var = 0.2;
    let h = ChannelTensor::iid_rayleigh(n_sc, n, k, k, 2);
    let mut err = 0.0;
    let trials = 5000;
    for _ in 0..trials {
        let mut y = ResourceGrid::zeros(n_sc, 1, n);
        for m in 0..n_sc {
            let (i, u) = (map.subband(m), map.owner(m));
            for r in 0..n {
                y.set(
                    r,
                    0,
                    m,
                    h.get(m, r, u) * pilots.get(i, u) + complex_normal(&mut rng, noise_var),
                );
            }
        }
        let est =
            xlmimo::chanest::ls_estimate_ul(&y, 0, &pilots, &map, Default::default()).unwrap();
        for i in 0..map.n_subbands() {
            for r in 0..n {
                for u in 0..k {
                    err += (est.subband_entry(i, r, u) - h.get(map.pilot_subcarrier(i, u), r, u))
                        .norm_sqr();
                }
            }
        }
    }
    let var = err / (trials * n_sc * n) as f64;
    assert!(
        (var - noise_var / 4.0).abs() < 0.05 * noise_var / 4.0,
        "{var}"
    );
}
