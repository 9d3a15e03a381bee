//! The scenario files shipped in `scenarios/` must parse, resolve to the
//! documented constants, and differ only in the presence of the initial
//! state.

use std::path::PathBuf;

use epigame_core::Scenario;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn the_tri_state_scenario_resolves_to_its_documented_rates() {
    let scenario =
        Scenario::load(&scenario_path("ny-nj-pa.toml")).expect("shipped scenario must parse");
    let resolved = scenario.resolve().expect("shipped scenario must resolve");

    assert_eq!(resolved.name, "ny-nj-pa");
    assert_eq!(resolved.rates.gamma, 0.2, "five-day latent period");
    assert_eq!(resolved.rates.lambda, 1.0 / 13.0, "thirteen-day infectious period");
    assert_eq!(resolved.rates.kappa, 0.0005, "0.65% fatality over 13 days");
    assert_eq!(resolved.rates.beta, 2.2 / 13.0);
    assert!(
        (resolved.rates.lambda - 0.076923).abs() < 1e-6,
        "λ should match its rounded headline value"
    );

    let b = &resolved.params.epi.beta_matrix;
    assert_eq!(b.dim(), (3, 3));
    assert!(
        (b[[0, 0]] - 0.1370769).abs() < 1e-7,
        "own-region transmission should match the hand-computed value, got {}",
        b[[0, 0]]
    );

    assert_eq!(resolved.params.regions.count(), 3);
    assert_eq!(resolved.params.epi.theta, 0.99);
    assert_eq!(resolved.params.cost.attention, 100.0);
    assert_eq!(resolved.params.cost.horizon, 180.0);
    assert!(
        (resolved.params.cost.inpatient_cost - 73_300.0 / 13.0).abs() < 1e-9,
        "inpatient cost should be the 13-day-stay daily rate"
    );

    assert!(
        resolved.initial.is_none(),
        "the base file leaves the initial state to the user"
    );
    let err = resolved.initial_state().expect_err("missing [initial] must be a config error");
    assert!(err.to_string().contains("initial"), "error should name the section: {err}");
}

#[test]
fn the_outbreak_variant_only_adds_the_initial_state() {
    let base = Scenario::load(&scenario_path("ny-nj-pa.toml")).unwrap().resolve().unwrap();
    let outbreak =
        Scenario::load(&scenario_path("ny-nj-pa-outbreak.toml")).unwrap().resolve().unwrap();

    assert_eq!(outbreak.params.epi.beta_matrix, base.params.epi.beta_matrix);
    assert_eq!(outbreak.params.cost, base.params.cost);
    assert_eq!(outbreak.params.epi.sigma_s, base.params.epi.sigma_s);

    let x0 = outbreak.initial_state().expect("outbreak variant carries a start state");
    assert_eq!(x0.len(), 9);
    assert_eq!(&x0[0..3], &[0.94; 3]);
    assert_eq!(&x0[3..6], &[0.04; 3]);
    assert_eq!(&x0[6..9], &[0.02; 3]);

    assert_ne!(
        base.digest, outbreak.digest,
        "different configurations must have different digests"
    );
}
