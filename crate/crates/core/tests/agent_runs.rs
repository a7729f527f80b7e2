use hha_core::agent::ReplanReason;
use hha_core::harness::{self, Budget, ExperimentConfig, Mode};

fn short_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.agent.refit_interval = 400;
    c.agent.max_dwell_time = 15;
    c.experiment.save_snapshots = false;
    c
}

#[test]
fn controls_stay_within_limit() {
    let c = short_config();
    let run = harness::run(&c, Mode::Hha, 11, Budget::Steps(1200)).unwrap();
    assert_eq!(run.steps.len(), 1200);
    assert!(run.refits >= 1);
    for e in &run.steps {
        assert!(e.control.abs() <= c.agent.control_limit, "control {}", e.control);
    }
}

#[test]
fn planner_runs_only_at_start_switch_or_dwell_expiry() {
    let c = short_config();
    let run = harness::run(&c, Mode::Hha, 12, Budget::Steps(1500)).unwrap();
    let replanned = run.steps.iter().filter(|e| e.replanned).count();
    assert_eq!(replanned, run.plans.len());
    let (start, switch, dwell) = run.planner_counts();
    assert_eq!(start + switch + dwell, run.plans.len());

    let dwell_limit = c.agent.max_dwell_time;
    let mut since_plan = 0;
    for pair in run.steps.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        since_plan += 1;
        if let (Some(a), Some(b)) = (prev.mode, cur.mode) {
            if a != b {
                assert!(cur.replanned, "mode switch at step {} without a plan", cur.step);
            }
        }
        if cur.replanned {
            since_plan = 0;
        }
        if cur.mode.is_some() && prev.mode.is_some() {
            assert!(since_plan <= dwell_limit, "no plan for {since_plan} steps at {}", cur.step);
        }
    }
    for p in &run.plans {
        let event = run.steps.iter().find(|e| e.step == p.step).unwrap();
        assert!(event.replanned);
        if p.reason == ReplanReason::ModeSwitch {
            assert_eq!(event.mode, Some(p.mode));
        }
    }
}

#[test]
fn runs_are_reproducible() {
    let c = short_config();
    let a = harness::run(&c, Mode::Hha, 13, Budget::Steps(900)).unwrap();
    let b = harness::run(&c, Mode::Hha, 13, Budget::Steps(900)).unwrap();
    assert_eq!(harness::trajectory_csv(&a.steps), harness::trajectory_csv(&b.steps));
    assert_eq!(a.plans, b.plans);
    let other = harness::run(&c, Mode::Hha, 14, Budget::Steps(900)).unwrap();
    assert_ne!(harness::trajectory_csv(&a.steps), harness::trajectory_csv(&other.steps));
}

#[test]
fn no_bonus_variant_reports_zero_bonuses() {
    let c = short_config();
    let run = harness::run(&c, Mode::HhaNoIg, 15, Budget::Steps(800)).unwrap();
    assert!(!run.plans.is_empty());
    for p in &run.plans {
        assert_eq!(p.breakdown.info_gain, 0.0);
        assert_eq!(p.breakdown.entropy, 0.0);
    }
}
