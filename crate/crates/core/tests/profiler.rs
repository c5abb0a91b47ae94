use dpc::config::{preset_model, PostNetConfig};
use dpc::dsp::StftConfig;
use dpc::profiler::{count, postnet_report, ComplexityReport};

fn report(name: &str) -> ComplexityReport {
    count(&preset_model(name).unwrap(), &StftConfig::default()).unwrap()
}

fn ratio(name: &str) -> f64 {
    report(name).compression_ratio(&report("uncompressed"))
}

#[test]
fn doubling_either_ratio_lowers_cost() {
    for family in ["trainmel-", "skippred-", "fixed-erb-", "fixed-mel-"] {
        let rs: Vec<f64> = [2, 4, 8, 16, 32].iter().map(|q| ratio(&format!("{family}{q}"))).collect();
        assert!(rs.windows(2).all(|w| w[1] > w[0]), "{family}: {rs:?}");
        assert!(rs[0] > 1.0);
    }
    for qf in [2, 4, 8] {
        let rs: Vec<f64> = [2, 4, 8].iter().map(|qt| ratio(&format!("dualpath-{qt}x{qf}"))).collect();
        assert!(rs.windows(2).all(|w| w[1] > w[0]), "time ratio, qf={qf}: {rs:?}");
    }
    for qt in [2, 4, 8] {
        let rs: Vec<f64> = [2, 4, 8].iter().map(|qf| ratio(&format!("dualpath-{qt}x{qf}"))).collect();
        assert!(rs.windows(2).all(|w| w[1] > w[0]), "freq ratio, qt={qt}: {rs:?}");
    }
}

#[test]
fn dual_path_roughly_multiplies() {
    let t = ratio("skippred-2-postnet");
    let f = ratio("trainmel-4");
    let both = ratio("dualpath-2x4");
    assert!((both / (t * f) - 1.0).abs() < 0.15, "{t} x {f} vs {both}");
}

#[test]
fn skip_prediction_stays_near_baseline_size() {
    // the time path adds only the stacking layer on top of the baseline body
    let base = report("uncompressed").params as f64;
    for q in [2, 4, 8, 16, 32] {
        let p = report(&format!("skippred-{q}")).params as f64;
        assert!(p >= base && p <= 1.25 * 185_000.0, "q={q}: {p}");
    }
}

#[test]
fn postnet_adds_exactly_its_own_cost() {
    let pn = postnet_report(&PostNetConfig::default(), &StftConfig::default());
    for q in [2, 8, 32] {
        let off = report(&format!("skippred-{q}"));
        let on = report(&format!("skippred-{q}-postnet"));
        assert_eq!(on.params - off.params, pn.params);
        assert!((on.macs_per_second - off.macs_per_second - pn.macs_per_second).abs() < 1.0);
    }
}

#[test]
fn layers_sum_to_totals_for_every_family() {
    for name in ["uncompressed", "fixed-mel-4", "trainmel-8", "skippred-16-postnet", "dualpath-8x8"] {
        let r = report(name);
        assert_eq!(r.params, r.layers.iter().map(|l| l.params).sum::<u64>());
        let s: f64 = r.layers.iter().map(|l| l.macs_per_frame as f64 * l.frames_per_second).sum();
        assert!((s - r.macs_per_second).abs() <= 1e-9 * s, "{name}");
        assert!((r.macs_per_frame * r.frames_per_second - r.macs_per_second).abs() <= 1e-6 * s);
    }
}

#[test]
fn compressed_layers_run_at_reduced_rate() {
    let r = report("dualpath-4x2");
    let fps = r.frames_per_second;
    for l in &r.layers {
        let full = l.name == "output" || l.name.starts_with("postnet.");
        let want = if full { fps } else { fps / 4.0 };
        assert!((l.frames_per_second - want).abs() < 1e-9, "{}", l.name);
    }
}

#[test]
fn json_report_is_complete() {
    let r = report("trainmel-2");
    let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(v["params"].as_u64().unwrap(), r.params);
    assert!((v["macs_per_second"].as_f64().unwrap() - r.macs_per_second).abs() < 1e-3);
    assert_eq!(v["layers"].as_array().unwrap().len(), r.layers.len());
    let back: ComplexityReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn invalid_model_is_rejected() {
    let mut cfg = preset_model("uncompressed").unwrap();
    cfg.heads = 7;
    assert!(count(&cfg, &StftConfig::default()).is_err());
}
