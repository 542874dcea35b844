use std::sync::OnceLock;

use boltzwave_core::collision_tensor::{build, BuildOptions, CollisionTensor};
use boltzwave_core::diagnostics::{step_tolerance, Diagnostics, DiagnosticsRecord, MomentSpec, Weight};
use boltzwave_core::haar_basis::FilteredBasis;
use boltzwave_core::kernel::KernelSpec;
use boltzwave_core::scenario_io::{run_scenario, ScenarioConfig};
use boltzwave_core::spectral_solver::{rhs, SpectralState};
use proptest::prelude::*;

struct Fixture {
    cfg: ScenarioConfig,
    basis: FilteredBasis,
    tensor: CollisionTensor,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = ScenarioConfig::minimal(2, 0.75);
        let basis = cfg.basis().unwrap();
        let kernel = KernelSpec::normalized(0.5, std::f64::consts::FRAC_PI_6, None).unwrap();
        let opts = BuildOptions {
            track_variance: true,
            ..cfg.build_options()
        };
        let tensor = build(&basis, &kernel, &opts).unwrap();
        Fixture { cfg, basis, tensor }
    })
}

fn trajectory() -> (Vec<SpectralState>, Vec<DiagnosticsRecord>, f64) {
    let f = fixture();
    let (mut states, mut recs) = (vec![], vec![]);
    let s = run_scenario(&f.cfg, &f.basis, &f.tensor, |st, r| {
        states.push(st.clone());
        recs.push(r.clone());
    })
    .unwrap();
    (states, recs, s.dt)
}

#[test]
fn theta_moment_never_increases() {
    let (_, recs, _) = trajectory();
    assert!(recs.len() > 10);
    let theta: Vec<f64> = recs.iter().map(|r| r.mass + r.energy).collect();
    for w in theta.windows(2) {
        assert!(w[1] <= w[0] + 1e-13 * theta[0], "{w:?}");
    }
    assert!(theta.last().unwrap() < &theta[0]);
}

#[test]
fn entropy_decreases_within_mc_tolerance_and_states_stay_positive() {
    let f = fixture();
    let (states, recs, dt) = trajectory();
    let diag = Diagnostics::new(&f.basis, &f.tensor.meta.ansatz, MomentSpec::default(), 0.0);
    let amp = f.basis.amplitude();
    for i in 1..recs.len() {
        let grad = diag.table().entropy_gradient(&states[i - 1].a, amp);
        let tol = step_tolerance(&f.tensor, &states[i - 1].a, &grad, dt, 3.0).unwrap();
        assert!(
            recs[i].entropy <= recs[i - 1].entropy + tol,
            "step {i}: {} -> {} (tol {tol})",
            recs[i - 1].entropy,
            recs[i].entropy
        );
        assert!(recs[i].min_cell >= -1e-10);
    }
    assert!(recs.last().unwrap().entropy < recs[0].entropy);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rhs_is_homogeneous_of_degree_two(a in prop::collection::vec(-1.0f64..2.0, 27), lambda in -4.0f64..4.0) {
        let t = &fixture().tensor;
        let (mut r1, mut r2) = (vec![0.0; 27], vec![0.0; 27]);
        rhs(&a, t, &mut r1);
        let scaled: Vec<f64> = a.iter().map(|x| lambda * x).collect();
        rhs(&scaled, t, &mut r2);
        let scale = r1.iter().map(|x| x.abs()).fold(0.0, f64::max) * lambda * lambda + 1e-300;
        for k in 0..27 {
            prop_assert!((r2[k] - lambda * lambda * r1[k]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn theta_flux_is_nonpositive_for_nonnegative_states(a in prop::collection::vec(0.0f64..1.0, 27)) {
        let f = fixture();
        let diag = Diagnostics::new(&f.basis, &f.tensor.meta.ansatz, MomentSpec::default(), 0.0);
        let mut r = vec![0.0; 27];
        rhs(&a, &f.tensor, &mut r);
        let flux = diag.mass(&r) + diag.table().pair(&Weight::Energy, &r).unwrap();
        let size = diag.mass(&a).abs() + 1e-300;
        prop_assert!(flux <= 1e-12 * size, "flux {flux}");
    }
}
