use std::path::PathBuf;

use cavsim_core::output::{write_run, write_trajectory, METRICS_HEADER, TRAJECTORY_HEADER};
use cavsim_core::{load_scenario, run, Engine, Error, Scenario, ScenarioConfig, VehicleId};

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    load_scenario(path).unwrap()
}

fn csv(sc: &Scenario) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, &run(sc).unwrap().trajectory).unwrap();
    buf
}

#[test]
fn stepping_by_hand_matches_run() {
    let sc = scenario("total_loss.json");
    let mut eng = Engine::new(sc.clone()).unwrap();
    let mut steps = 0;
    while eng.step().unwrap() {
        steps += 1;
    }
    assert_eq!(steps, sc.engine.n_steps);
    assert!(!eng.step().unwrap());
    let mut by_hand = Vec::new();
    write_trajectory(&mut by_hand, &eng.finish().trajectory).unwrap();
    assert_eq!(by_hand, csv(&sc));
}

#[test]
fn zero_duration_runs_no_steps() {
    let mut sc = scenario("two_vehicle.json");
    sc.config.engine.duration_s = 0.0;
    let sc = sc.config.clone().resolve().unwrap();
    let r = run(&sc).unwrap();
    assert_eq!(r.summary.steps, 0);
    assert!(r.trajectory.is_empty());
    assert_eq!(r.summary.max_abs_pos_err_m, 0.0);
}

#[test]
fn perfect_channel_estimates_exactly() {
    let r = run(&scenario("nominal_20.json")).unwrap();
    assert!(r.summary.max_abs_pos_err_m < 1e-9);
    assert_eq!(r.summary.counters.beacons_dropped_nlos, 0);
    assert_eq!(r.summary.counters.beacons_dropped_random, 0);
    assert!(!r.metrics.is_empty());
    assert!(r.metrics.iter().all(|m| !m.horizon_exhausted));
    assert!(r.metrics.iter().any(|m| m.link_up));
}

#[test]
fn beacon_accounting_balances() {
    let r = run(&scenario("five_vehicle_blackout.json")).unwrap();
    let c = &r.summary.counters;
    let settled = c.beacons_delivered + c.beacons_dropped_nlos + c.beacons_dropped_random;
    assert!(settled <= c.beacons_sent);
    // Only beacons sent in the last few tenths of a second can still be in flight.
    assert!(c.beacons_sent - settled <= 5 * 4 * 30);
    assert!(c.beacons_dropped_nlos > 0);
    assert!(c.beacons_dropped_random > 0);
}

#[test]
fn trajectory_rows_advance_in_time_and_never_reverse() {
    let r = run(&scenario("nominal_20.json")).unwrap();
    let mut last = std::collections::BTreeMap::<VehicleId, (f64, f64)>::new();
    for row in &r.trajectory {
        assert!(row.speed >= 0.0);
        if let Some((t, pos)) = last.insert(row.vehicle, (row.time, row.position)) {
            assert!(row.time > t);
            assert!(row.position >= pos - 1e-12 || row.position < 1000.0 - 140.0);
        }
    }
}

#[test]
fn second_spawn_waits_until_the_leg_is_clear() {
    let json = r#"{
        "engine": { "sim_step_s": 0.1, "duration_s": 20.0 },
        "channel": { "delay_mean_s": 0.0, "delay_std_s": 0.0, "loss_prob": 0.0 },
        "estimator": { "prediction_step_s": 0.1 },
        "intersections": [{ "legs": [{ "id": 0 }] }],
        "spawns": { "events": [
            { "time_s": 0.0, "leg": 0, "speed_mps": 10.0 },
            { "time_s": 0.0, "leg": 0, "speed_mps": 10.0 }
        ] }
    }"#;
    let sc = Scenario::from_json_str(json).unwrap();
    let mut eng = Engine::new(sc).unwrap();
    eng.step().unwrap();
    assert_eq!(eng.vehicle_ids().len(), 1);
    while eng.vehicle_ids().len() < 2 {
        assert!(eng.step().unwrap(), "second vehicle never spawned");
    }
    let c = eng.counters();
    assert!(c.spawns_deferred >= 1);
    let front = eng.state(VehicleId(0)).unwrap();
    let back = eng.state(VehicleId(1)).unwrap();
    assert!(front.rear() - back.position >= eng.scenario().engine.spawn_gap - 1e-9);
}

#[test]
fn routed_vehicle_crosses_two_intersections() {
    let json = r#"{
        "engine": { "sim_step_s": 0.1, "duration_s": 40.0 },
        "channel": { "delay_mean_s": 0.0, "delay_std_s": 0.0, "loss_prob": 0.0 },
        "estimator": { "prediction_step_s": 0.1 },
        "intersections": [
            { "legs": [{ "id": 0, "approach_length_m": 100.0 }], "control_zone_radius_m": 80.0 },
            { "legs": [{ "id": 0, "approach_length_m": 100.0 }, { "id": 1, "approach_length_m": 100.0 }], "control_zone_radius_m": 80.0 }
        ],
        "spawns": { "events": [
            { "time_s": 0.0, "leg": 0, "speed_mps": 12.0, "route": [{ "intersection": 1, "leg": 1 }] }
        ] }
    }"#;
    let sc = Scenario::from_json_str(json).unwrap();
    let r = run(&sc).unwrap();
    assert_eq!(r.summary.counters.vehicles_spawned, 1);
    assert_eq!(r.summary.counters.vehicles_completed, 1);
    let legs: Vec<u32> = r.trajectory.iter().map(|row| row.leg.0).collect();
    assert_eq!(legs.first(), Some(&0));
    assert!(legs.contains(&1));
}

#[test]
fn writes_the_three_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = run(&scenario("two_vehicle.json")).unwrap();
    write_run(&out, &r).unwrap();
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(traj.lines().next(), Some(TRAJECTORY_HEADER));
    assert_eq!(metrics.lines().next(), Some(METRICS_HEADER));
    assert_eq!(traj.lines().count(), r.trajectory.len() + 1);
    for key in [
        "max_abs_pos_err_m",
        "rms_pos_err_m",
        "violation_count",
        "full_stop_count",
        "vehicles",
    ] {
        assert!(summary.get(key).is_some(), "summary.json lacks {key}");
    }
}

#[test]
fn normalized_config_round_trips() {
    let sc = scenario("five_vehicle_blackout.json");
    let echoed = sc.config.to_json_pretty();
    let again = ScenarioConfig::from_json_str(&echoed).unwrap();
    assert_eq!(again, sc.config);
    assert_eq!(csv(&again.resolve().unwrap()), csv(&sc));
}

#[test]
fn nested_typo_is_rejected_with_its_name() {
    let err = Scenario::from_json_str(r#"{ "estimator": { "horizon": 5.0 } }"#).unwrap_err();
    assert!(matches!(err, Error::Config { .. }));
    assert!(err.to_string().contains("horizon"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_scenario("/nonexistent/cavsim.json").unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
}

#[test]
fn recorded_positions_follow_the_plant_recurrence() {
    let sc = scenario("five_vehicle_blackout.json");
    let dt = sc.engine.sim_step;
    let r = run(&sc).unwrap();
    let mut last = std::collections::BTreeMap::new();
    let mut checked = 0;
    for row in &r.trajectory {
        if let Some((pos, speed)) = last.insert(row.vehicle, (row.position, row.speed)) {
            assert_eq!(
                row.position,
                pos + speed * dt,
                "vehicle {} at t={}",
                row.vehicle,
                row.time
            );
            checked += 1;
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn sweep_at_the_plant_step_with_perfect_comms_is_exact() {
    let sc = scenario("two_vehicle.json");
    let runs = cavsim_core::sweep_prediction_step(&sc, &[0.1]).unwrap();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].summary.max_abs_pos_err_m < 1e-6);
    assert!(matches!(
        cavsim_core::sweep_prediction_step(&sc, &[]),
        Err(Error::Config { .. })
    ));
}
