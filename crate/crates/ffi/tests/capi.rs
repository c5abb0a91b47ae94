use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dpc::model::init_weights;
use dpc::config::RunConfig;
use dpc_ffi::*;

fn noise(n: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            ((s >> 40) as f32 / (1u64 << 24) as f32 - 0.5) * 0.2
        })
        .collect()
}

fn weights_file(dir: &Path, preset: &str) -> CString {
    let cfg = RunConfig::preset(preset).unwrap();
    let w = init_weights(&cfg.model, cfg.stft.num_bins(), 11).unwrap();
    let p = dir.join(format!("{preset}.bin"));
    w.save(&p).unwrap();
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = dpc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn stream_matches_offline_through_the_c_api() {
    let dir = tempfile::tempdir().unwrap();
    let wpath = weights_file(dir.path(), "skippred-2-postnet");
    let preset = CString::new("skippred-2-postnet").unwrap();
    let mut eng = ptr::null_mut();
    unsafe {
        assert_eq!(dpc_engine_new_preset(preset.as_ptr(), wpath.as_ptr(), &mut eng), DpcStatus::Ok);
        let n = 5000;
        let (d, x) = (noise(n, 1), noise(n, 2));
        let mut off = vec![0.0f32; n];
        assert_eq!(dpc_engine_enhance(eng, d.as_ptr(), x.as_ptr(), n, off.as_mut_ptr()), DpcStatus::Ok);

        let mut st = ptr::null_mut();
        assert_eq!(dpc_stream_new(eng, &mut st), DpcStatus::Ok);
        // the stream keeps its own reference to the engine
        dpc_engine_free(eng);
        let chunk = 237;
        let mut buf = vec![0.0f32; dpc_stream_output_bound(st, chunk)];
        let mut on = Vec::new();
        for (dc, xc) in d.chunks(chunk).zip(x.chunks(chunk)) {
            let mut got = 0usize;
            let s = dpc_stream_process(st, dc.as_ptr(), xc.as_ptr(), dc.len(), buf.as_mut_ptr(), buf.len(), &mut got);
            assert_eq!(s, DpcStatus::Ok);
            on.extend_from_slice(&buf[..got]);
        }
        let mut got = 0usize;
        assert_eq!(dpc_stream_flush(st, buf.as_mut_ptr(), buf.len(), &mut got), DpcStatus::Ok);
        on.extend_from_slice(&buf[..got]);
        dpc_stream_free(st);

        assert_eq!(on.len(), n);
        let peak = off.iter().fold(0.0f32, |a, v| a.max(v.abs()));
        for (a, b) in on.iter().zip(&off) {
            assert!((a - b).abs() <= 1e-5 * peak);
        }
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("absent.bin").to_str().unwrap()).unwrap();
    let mut eng = ptr::null_mut();
    unsafe {
        assert_eq!(dpc_engine_new(ptr::null(), missing.as_ptr(), &mut eng), DpcStatus::Io);
        assert!(last_error().contains("absent.bin"));
        assert!(eng.is_null());

        let bad = CString::new(r#"{"model": {"heads": 5}}"#).unwrap();
        let wpath = weights_file(dir.path(), "uncompressed");
        assert_eq!(dpc_engine_new(bad.as_ptr(), wpath.as_ptr(), &mut eng), DpcStatus::Config);

        let other = CString::new("trainmel-2").unwrap();
        assert_eq!(dpc_engine_new_preset(other.as_ptr(), wpath.as_ptr(), &mut eng), DpcStatus::Weights);

        let garbage = dir.path().join("garbage.bin");
        std::fs::write(&garbage, b"NOPE....").unwrap();
        let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
        assert_eq!(dpc_engine_new(ptr::null(), garbage.as_ptr(), &mut eng), DpcStatus::Weights);
        assert!(last_error().contains("bad magic"));

        assert_eq!(dpc_engine_new(ptr::null(), wpath.as_ptr(), ptr::null_mut()), DpcStatus::NullPointer);

        assert_eq!(dpc_engine_new(ptr::null(), wpath.as_ptr(), &mut eng), DpcStatus::Ok);
        assert!(dpc_last_error().is_null());
        let mut st = ptr::null_mut();
        assert_eq!(dpc_stream_new(eng, &mut st), DpcStatus::Ok);
        let d = vec![0.0f32; 160];
        let mut out = vec![0.0f32; 10];
        let mut got = 0usize;
        let s = dpc_stream_process(st, d.as_ptr(), d.as_ptr(), d.len(), out.as_mut_ptr(), out.len(), &mut got);
        assert_eq!(s, DpcStatus::BufferTooSmall);
        assert_eq!(dpc_stream_reset(st), DpcStatus::Ok);
        dpc_stream_free(st);
        dpc_engine_free(eng);
        dpc_engine_free(ptr::null_mut());
        dpc_stream_free(ptr::null_mut());
    }
}

#[test]
fn metrics_and_profile() {
    let x = noise(16_000, 3);
    let quiet: Vec<f32> = x.iter().map(|v| v / 10.0).collect();
    let mut v = 0.0f64;
    unsafe {
        assert_eq!(dpc_erle(x.as_ptr(), quiet.as_ptr(), x.len(), &mut v), DpcStatus::Ok);
        assert!((v - 20.0).abs() < 1e-6);
        assert_eq!(dpc_si_snr(quiet.as_ptr(), x.as_ptr(), x.len(), &mut v), DpcStatus::Ok);
        assert_eq!(v, 60.0);
        assert_eq!(dpc_stoi(x.as_ptr(), x.as_ptr(), x.len(), &mut v), DpcStatus::Ok);
        assert!((v - 1.0).abs() < 1e-6);
        let zero = vec![0.0f32; 100];
        assert_eq!(dpc_si_snr(x.as_ptr(), zero.as_ptr(), 100, &mut v), DpcStatus::Signal);

        let mut s = ptr::null_mut();
        assert_eq!(dpc_profile_json(ptr::null(), &mut s), DpcStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_owned();
        dpc_string_free(s);
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["params"], 102_678);
        assert!(CStr::from_ptr(dpc_version()).to_str().unwrap().starts_with("0."));
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/dpc.h");
    assert!(header.exists());
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["dpc_engine_new", "dpc_stream_process", "dpc_stream_flush", "dpc_profile_json", "DPC_STATUS_OK"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"dpc.h\"\nint main(void) { DpcEngine *e = 0; DpcStatus s = dpc_engine_new(0, \"w\", &e); return (int)s; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler available, skipping compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
