use std::sync::OnceLock;

use metastat::analysis;
use metastat::checks;
use metastat::config::{ColumnProfile, InitialDataConfig, ProfileConfig, SourceConfig};
use metastat::growth::{self, GUARD_RADIUS};
use metastat::lattice::LatticeSpec;
use metastat::renewal::{self, SourceSamples};
use metastat::spectral::laplace_kernel;
use metastat::{BirthRate, BoundaryPoint, CharacteristicLattice, EmissionProfile, GrowthParams, PhasePoint, RunConfig, Side, SpectralSolution};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params() -> GrowthParams {
    GrowthParams::new(0.5, 2.0, 1.0).unwrap()
}

struct Fixture {
    lattice: CharacteristicLattice,
    spectral: SpectralSolution,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let p = params();
        let lattice = CharacteristicLattice::build(
            &p,
            &EmissionProfile::default_hat(&p),
            &BirthRate::new(0.1, 2.0 / 3.0).unwrap(),
            &LatticeSpec::new(64, 12).with_tau_max(20.0),
        )
        .unwrap();
        let spectral = SpectralSolution::solve(&lattice, 1e-12, 1e-6).unwrap();
        Fixture { lattice, spectral }
    })
}

fn side() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::G1), Just(Side::G2), Just(Side::G3), Just(Side::G4)]
}

fn growth() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.05f64..3.0, 0.2f64..5.0, 0.05f64..0.95).prop_map(|(a, c, frac)| (a, c, c * frac))
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    let initial = prop_oneof![
        Just(InitialDataConfig::Zero),
        (0.0f64..10.0, 0.1f64..3.0, 0.0f64..5.0, any::<bool>()).prop_map(|(center, width, amplitude, e)| {
            InitialDataConfig::TauBump {
                center,
                width,
                amplitude,
                columns: if e { ColumnProfile::Emission } else { ColumnProfile::Uniform },
            }
        }),
        (1.0f64..2.0, 1.0f64..2.0, 0.05f64..1.0, 0.0f64..3.0)
            .prop_map(|(x, theta, width, amplitude)| InitialDataConfig::Gaussian { x, theta, width, amplitude }),
    ];
    let source = prop_oneof![
        Just(SourceConfig::None),
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(u, v)| SourceConfig::PrimaryTumor { x: 1.0 + u, theta: 1.0 + v }),
    ];
    (
        growth(),
        any::<u64>(),
        (0.0f64..1.0, -1.0f64..2.0),
        (8usize..600, 8usize..200, proptest::option::of(1.0f64..200.0), 0.1f64..100.0),
        initial,
        source,
        (1e-14f64..1e-4, 1e-14f64..1e-4, 1e-12f64..1e-2),
        (side(), 0.2f64..0.8, 0.1f64..0.5),
    )
        .prop_map(|((a, c, d), seed, (m, alpha), (i, j, tau_max, horizon), init, source, (ode, root, quad), (s, center, width))| {
            let mut cfg = RunConfig::default();
            cfg.seed = seed;
            cfg.growth.a = a;
            cfg.growth.c = c;
            cfg.growth.d = d;
            cfg.emission.m = m;
            cfg.emission.alpha = alpha;
            let len = cfg.growth_params().unwrap().side_length();
            cfg.emission.profile = ProfileConfig::TriangularHat {
                side: s,
                center: Some(center * len),
                width: Some(width * len),
            };
            cfg.grid.tau_steps = i;
            cfg.grid.sigma_steps = j;
            cfg.grid.tau_max = tau_max;
            cfg.grid.horizon = horizon;
            cfg.grid.snapshot_times = vec![0.0, 0.5 * horizon, horizon];
            cfg.initial_data = init;
            // Keep the tumor start inside [1, b]^2.
            cfg.source = match source {
                SourceConfig::PrimaryTumor { x, theta } => {
                    let b = cfg.growth_params().unwrap().b();
                    SourceConfig::PrimaryTumor {
                        x: 1.0 + (x - 1.0) * (b - 1.0),
                        theta: 1.0 + (theta - 1.0) * (b - 1.0),
                    }
                }
                other => other,
            };
            cfg.tolerances.ode = ode;
            cfg.tolerances.root = root;
            cfg.tolerances.quad = quad;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips_through_toml(cfg in run_config()) {
        prop_assert!(cfg.validate().is_ok());
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn chart_unchart_round_trip(side in side(), u in 0.001f64..0.999, (a, c, d) in growth()) {
        let p = GrowthParams::new(a, c, d).unwrap();
        let s = u * p.side_length();
        let q = BoundaryPoint::new(side, s, &p).unwrap();
        let back = BoundaryPoint::unchart(&q.position(), &p).unwrap();
        prop_assert_eq!(back.side, side);
        prop_assert!((back.s - s).abs() <= 1e-12 * p.b());
        // Inflow everywhere on the open sides.
        prop_assert!(q.g_dot_nu < 0.0);
    }

    #[test]
    fn flow_stays_in_square_with_positive_jacobian(side in side(), u in 0.01f64..0.99, tau in 0.0f64..60.0) {
        let p = params();
        let sigma = BoundaryPoint::new(side, u * p.side_length(), &p).unwrap();
        let r = growth::flow(&sigma, tau, &p, 1e-10).unwrap();
        let b = p.b();
        prop_assert!(r.position.x >= 1.0 && r.position.x <= b);
        prop_assert!(r.position.theta >= 1.0 && r.position.theta <= b);
        prop_assert!(r.jacobian > 0.0);
    }

    #[test]
    fn flow_is_a_semigroup(side in side(), u in 0.01f64..0.99, t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
        let p = params();
        let sigma = BoundaryPoint::new(side, u * p.side_length(), &p).unwrap();
        let mid = growth::flow(&sigma, t1, &p, 1e-12).unwrap().position;
        let direct = growth::flow(&sigma, t1 + t2, &p, 1e-12).unwrap().position;
        let composed = growth::primary_tumor(&mid, &[0.0, t2], &p, 1e-12).unwrap()[1];
        prop_assert!(direct.distance(&composed) < 1e-8);
    }

    #[test]
    fn inverse_flow_recovers_entry(side in side(), u in 0.02f64..0.98, tau in 0.0f64..2.0) {
        // τ is kept moderate: deep in the basin the entry pair is
        // exponentially ill-conditioned, see the position roundtrip below.
        let p = params();
        let sigma = BoundaryPoint::new(side, u * p.side_length(), &p).unwrap();
        let x = growth::flow(&sigma, tau, &p, 1e-12).unwrap().position;
        let (t, back) = growth::inverse_flow(&x, &p, 1e-12).unwrap();
        prop_assert!((t - tau).abs() < 1e-6, "{} vs {}", t, tau);
        prop_assert!(back.position().distance(&sigma.position()) < 1e-6);
    }

    #[test]
    fn inverse_flow_round_trips_in_position(x in 1.0f64..2.8284, theta in 1.0f64..2.8284) {
        let p = params();
        let pt = PhasePoint::new(x, theta);
        prop_assume!(pt.distance(&p.equilibrium()) > GUARD_RADIUS * p.b());
        let (t, sigma) = growth::inverse_flow(&pt, &p, 1e-10).unwrap();
        let again = growth::flow(&sigma, t, &p, 1e-10).unwrap().position;
        prop_assert!(again.distance(&pt) <= 1e-6 * p.side_length());
    }

    #[test]
    fn laplace_transform_is_decreasing(l1 in 1e-3f64..5.0, l2 in 1e-3f64..5.0) {
        prop_assume!((l1 - l2).abs() > 1e-9);
        let f = fixture();
        let k = f.lattice.kernel();
        let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
        let (f_lo, d_lo) = laplace_kernel(lo, &k, f.lattice.dtau());
        let (f_hi, _) = laplace_kernel(hi, &k, f.lattice.dtau());
        prop_assert!(f_hi < f_lo);
        prop_assert!(d_lo < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn comparison_principle(seed in any::<u64>(), q in 0.0f64..2.0) {
        let f = fixture();
        let lat = &f.lattice;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = checks::random_ordered_pair(lat, &mut rng);
        let steps = 40;
        let profile: Vec<f64> = (0..=steps).map(|n| q * (1.0 + (0.2 * n as f64).sin())).collect();
        let source = SourceSamples::separable(lat, &profile);
        let r = analysis::check_comparison(lat, &a, &b, &source).unwrap();
        prop_assert!(r.ordered, "{:?}", r.first_violation);
    }

    #[test]
    fn solution_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let f = fixture();
        let lat = &f.lattice;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r1, r2) = checks::random_ordered_pair(lat, &mut rng);
        let steps = 30;
        let s1 = SourceSamples::separable(lat, &vec![0.3; steps + 1]);
        let s2 = SourceSamples::zero(lat.cols(), steps);
        let comb: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| alpha * x + beta * y).collect();
        let sc = s1.scaled(alpha);
        let f1 = renewal::simulate(lat, &r1, &s1).unwrap();
        let f2 = renewal::simulate(lat, &r2, &s2).unwrap();
        let fc = renewal::simulate(lat, &comb, &sc).unwrap();
        let scale = f1.slice(steps).iter().chain(f2.slice(steps).iter()).fold(1.0f64, |m, v| m.max(v.abs()));
        for n in [0, steps / 2, steps] {
            let (a1, a2, ac) = (f1.slice(n), f2.slice(n), fc.slice(n));
            for k in 0..ac.len() {
                prop_assert!((ac[k] - (alpha * a1[k] + beta * a2[k])).abs() <= 1e-11 * scale * (1.0 + alpha.abs() + beta.abs()));
            }
        }
    }

    #[test]
    fn contraction_holds_for_signed_data(seed in any::<u64>(), w in 0.0f64..1.5) {
        let f = fixture();
        let lat = &f.lattice;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = checks::random_ordered_pair(lat, &mut rng);
        // Signed data: the upper profile minus a shifted multiple of the lower one.
        let cols = lat.cols();
        let rows = lat.rows();
        let signed: Vec<f64> = (0..rows * cols)
            .map(|k| hi[k] - w * lo[(k + 7 * cols) % (rows * cols)])
            .collect();
        let field = renewal::simulate(lat, &signed, &SourceSamples::zero(cols, 40)).unwrap();
        let c = analysis::check_contraction(&field, lat, &f.spectral, 1e-3).unwrap();
        prop_assert!(c.holds, "{:?}", c.margins);
    }

    #[test]
    fn nonnegative_data_stays_nonnegative(seed in any::<u64>()) {
        let f = fixture();
        let lat = &f.lattice;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, b) = checks::random_ordered_pair(lat, &mut rng);
        let field = renewal::simulate(lat, &b, &SourceSamples::zero(lat.cols(), 40)).unwrap();
        prop_assert!(field.birth_rate().iter().all(|v| *v >= 0.0));
        for n in 0..=40 {
            prop_assert!(field.slice(n).iter().all(|v| *v >= 0.0));
        }
    }
}
