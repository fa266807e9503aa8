use ergosde::model::Profile;
use ergosde::{Problem, SchemeKind, Sde};
use ergosde_cli::{CliError, Format, RunConfig};
use proptest::prelude::*;

const FULL: &str = r#"
seed = 11
format = "csv"

[problem.custom]
family = "scalar"
name = "cubic_custom"
drift = { coeffs = [0.0, -1.0, 0.0, -1.0] }
diffusion = { kind = "sqrt_quadratic", nu = 0.5, alpha = 1.0, beta = 1.0 }
params = { gamma = 3.0, l1 = 0.5, l2 = 50.0, l3 = 0.5, p_star = 6.5, growth_const = 6.0 }

[scheme]
kind = "bem"
tau = 0.02
tau_grid = [0.04, 0.02]

[phi]
kind = "constant"
value = 1.5

[check]
n_samples = 500

[simulate]
y0 = [0.5]
n_steps = 20000
burn_in = 1000
trace_thin = 7

[stein]
n_steps = 40000
thin = 50
n_mc = 2000
n_mc_atau = 8000

[converge]
slope_range = [0.7, 1.3]

[converge.budget]
pilot_steps = 100000
n_chains = 2

[blowup]
x0 = [5.0]
compared = ["tem"]
"#;

#[test]
fn full_config_parses() {
    let cfg = RunConfig::parse(FULL).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.format, Format::Csv);
    assert_eq!(cfg.scheme.kind, SchemeKind::Bem);
    assert_eq!(cfg.phi, Profile::Constant { value: 1.5 });
    assert_eq!(cfg.stein.n_mc_atau, Some(8000));
    assert_eq!(cfg.converge.budget.n_chains, 2);
    // untouched budget fields keep their defaults
    assert_eq!(cfg.converge.budget.target_ratio, 5.0);
    let p = cfg.resolve_problem().unwrap();
    assert_eq!(p.name(), "cubic_custom");
    let mut b = [0.0];
    p.drift(&[2.0], &mut b);
    assert_eq!(b[0], -10.0);
}

#[test]
fn round_trip_is_identity() {
    for cfg in [RunConfig::default(), RunConfig::parse(FULL).unwrap()] {
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg, "{text}");
        assert_eq!(back.to_toml().unwrap(), text);
    }
}

#[test]
fn empty_file_gives_defaults() {
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = RunConfig::parse("seed = 1\n[scheme]\ntau = = 0.1\n").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn unknown_keys_are_rejected_at_every_level() {
    for text in [
        "sede = 1",
        "[scheme]\nkinds = \"em\"",
        "[stein]\nn_mcc = 10",
        "[converge.budget]\npilot = 10",
        "[check]\nsamples = 10",
        "[problem.custom]\nfamily = \"scalar\"\nname = \"x\"\ndrift = { coeffs = [0.0] }\ndiffusion = { kind = \"constant\", value = 1.0 }\nparams = { gamma = 2.0, l1 = 1.0, l2 = 1.0, l3 = 0.5, p_star = 2.0, growth_const = 1.0, extra = 1.0 }",
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert!(matches!(err, CliError::Config { .. }), "{text}: {err}");
        assert!(err.to_string().contains("unknown field"), "{text}: {err}");
    }
}

#[test]
fn invalid_references_are_rejected() {
    let cases = [
        "[problem]\nid = \"nope\"",
        "[problem]\n",
        "[problem]\nid = \"ou\"\n[problem.custom]\nfamily = \"radial\"\nname = \"r\"\ndim = 2\nlinear = 1.0\ncubic = 1.0\nnu = 0.5\nalpha = 1.0\nbeta = 1.0\nparams = { gamma = 3.0, l1 = 0.25, l2 = 2.0, l3 = 0.5, p_star = 2.0, growth_const = 6.0 }",
        "[scheme]\nkind = \"rk4\"",
        "[scheme]\ntau = 0.0",
        "[scheme]\ntau_grid = [0.1, -0.1]",
        "[phi]\nkind = \"cosine\"",
        "[problem]\nid = \"ou\"\nparams = { gamma = 1.0, l1 = 1.0, l2 = 1.0, l3 = 0.5, p_star = 2.0, growth_const = 1.0 }",
        "[blowup]\nmin_fraction = 1.5",
        "[converge]\nslope_range = [1.2, 0.8]",
    ];
    for text in cases {
        assert!(RunConfig::parse(text).is_err(), "{text}");
    }
}

#[test]
fn params_override_applies() {
    let cfg = RunConfig::parse(
        "[problem]\nid = \"double_well\"\nparams = { gamma = 3.0, l1 = 2.0, l2 = 8.0, l3 = 0.5, p_star = 2.0, growth_const = 6.0 }",
    )
    .unwrap();
    match cfg.resolve_problem().unwrap() {
        Problem::Scalar(p) => assert_eq!(p.params.l1, 2.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn overrides_reach_nested_seeds() {
    let cfg = RunConfig::default().resolved(Some(42), Some("x".into()), Some(Format::Csv));
    assert_eq!((cfg.seed, cfg.check.seed, cfg.stein.seed), (42, 42, 42));
    assert_eq!(cfg.format, Format::Csv);
    assert_eq!(cfg.out_dir.as_deref(), Some(std::path::Path::new("x")));
}

#[test]
fn seeds_beyond_toml_range_are_reported() {
    let cfg = RunConfig::default().resolved(Some(u64::MAX), None, None);
    assert!(matches!(cfg.to_toml(), Err(CliError::Config { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_preserves_numbers(
        seed in 0..=i64::MAX as u64,
        tau in 1e-6f64..0.9,
        grid in proptest::collection::vec(1e-6f64..0.9, 1..6),
        n_steps in 1u64..u32::MAX as u64,
        y0 in -1e3f64..1e3,
        kind in prop_oneof![Just(SchemeKind::Em), Just(SchemeKind::Tem), Just(SchemeKind::Pem), Just(SchemeKind::Bem)],
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.scheme.kind = kind;
        cfg.scheme.tau = tau;
        cfg.scheme.tau_grid = grid;
        cfg.simulate.n_steps = n_steps;
        cfg.simulate.y0 = vec![y0];
        let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
