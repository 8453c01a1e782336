use dsdsim_core::model::{on_grid_path, ChannelRealization, SystemConfig};
use dsdsim_core::C64;
use serde_json::Value;

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => (x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-15,
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(u, v)| close(u, v)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, u)| y.get(k).is_some_and(|v| close(u, v)))
        }
        _ => a == b,
    }
}

/// One on-grid path at tap 0 and broadside on a 2x2 link with two taps.
/// Hand-computed: gain scale sqrt(2*2/1) = 2, h(0) = 1, h(1) = 0, and both
/// steering vectors are [1, 1] / sqrt(2).
const GOLDEN: &str = r#"{
  "n_tx": 2,
  "n_rx": 2,
  "n_taps": 2,
  "paths": [
    { "gain": [1.0, 0.0], "delay_s": 0.0, "aoa_rad": 0.0, "aod_rad": 0.0, "doppler_rad_per_sample": 0.0 }
  ],
  "tap_gain_vectors": [[[2.0, 0.0]], [[0.0, 0.0]]],
  "steering_tx": [[[0.7071067811865476, 0.0], [0.7071067811865476, 0.0]]],
  "steering_rx": [[[0.7071067811865476, 0.0], [0.7071067811865476, 0.0]]]
}"#;

fn tiny() -> SystemConfig {
    SystemConfig {
        n_tx: 2,
        n_rx: 2,
        g_tx: 4,
        g_rx: 4,
        n_taps: 2,
        ..SystemConfig::default()
    }
}

#[test]
fn channel_json_matches_golden() {
    let cfg = tiny();
    let ch = ChannelRealization::from_paths(&cfg, vec![on_grid_path(&cfg, C64::new(1.0, 0.0), 0, 0, 0)]).unwrap();
    let got = serde_json::to_value(&ch).unwrap();
    let want: Value = serde_json::from_str(GOLDEN).unwrap();
    assert!(close(&got, &want), "{}", serde_json::to_string_pretty(&got).unwrap());
}

#[test]
fn channel_json_round_trips() {
    let cfg = tiny();
    let ch = ChannelRealization::from_paths(&cfg, vec![on_grid_path(&cfg, C64::new(0.3, -1.1), 1, 3, 2)]).unwrap();
    let text = serde_json::to_string(&ch).unwrap();
    let back: ChannelRealization = serde_json::from_str(&text).unwrap();
    assert_eq!(back, ch);
}
