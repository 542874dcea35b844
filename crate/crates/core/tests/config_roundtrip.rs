use boltzwave_core::diagnostics::MomentSpec;
use boltzwave_core::scenario_io::{emit_config, parse_config, Dt, ScenarioConfig, TEnd, B0};
use boltzwave_core::spectral_solver::{Bump, Method};
use proptest::prelude::*;

fn bump() -> impl Strategy<Value = Bump> {
    (0.0f64..5.0, prop::array::uniform3(-3.0f64..3.0), 1e-3f64..10.0).prop_map(|(rho, u, temperature)| Bump {
        rho,
        u,
        temperature,
    })
}

fn config() -> impl Strategy<Value = ScenarioConfig> {
    (
        (
            1u32..6,
            0.7f64..0.99,
            -0.9f64..0.99,
            0.01f64..1.5,
            prop::option::of(0.1f64..10.0),
        ),
        (any::<bool>(), 0.01f64..1.0, 1u64..64, any::<u64>()),
        (
            any::<bool>(),
            prop::option::of(1e-3f64..1.0),
            prop_oneof![
                (0.0f64..20.0).prop_map(TEnd::Time),
                (0.0f64..10.0).prop_map(|c| TEnd::Collisions { collision_times: c })
            ],
            1usize..10,
        ),
        prop::collection::vec(bump(), 1..4),
        (prop::collection::vec(0.5f64..5.0, 0..4), 0.0f64..0.2, 0.1f64..1.9),
        (
            any::<bool>(),
            any::<bool>(),
            prop::option::of("[a-z]{1,8}/[a-z]{1,8}\\.csv"),
        ),
    )
        .prop_map(
            |(
                (level, delta, gamma, theta_b, lambda),
                (norm, b0, samples, seed),
                (euler, dt, t_end, stride),
                initial,
                (s, exp_a, exp_s),
                (unw, plain, csv),
            )| {
                let mut c = ScenarioConfig::minimal(level, delta);
                c.kernel.gamma = gamma;
                c.kernel.theta_b = theta_b;
                c.kernel.lambda = lambda;
                if !norm {
                    c.kernel.b0 = B0::Value(b0);
                }
                c.mc.samples_per_pair = samples;
                c.mc.seed = seed;
                c.solver.method = if euler { Method::Euler } else { Method::Rk4 };
                if let Some(dt) = dt {
                    c.solver.dt = Dt::Fixed(dt);
                }
                c.solver.t_end = t_end;
                c.solver.output_stride = stride;
                c.initial = initial;
                c.moments = MomentSpec { s, exp_a, exp_s };
                c.flags.unweighted_variant = unw;
                c.flags.plain_trial = plain;
                c.paths.csv_out = csv.map(Into::into);
                c
            },
        )
        .prop_filter("valid", |c| c.validate().is_ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn emit_then_parse_is_identity(c in config()) {
        let text = emit_config(&c);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(emit_config(&back), text);
    }
}
