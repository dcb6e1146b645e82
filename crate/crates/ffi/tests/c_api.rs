use std::ffi::{CStr, CString};
use std::ptr;

use forecast_sde_ffi::*;

fn last_error() -> String {
    let p = fsde_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn params(theta0: f64, alpha: f64, model: u32) -> *mut FsdeParams {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { fsde_params_new(theta0, alpha, model, &mut out) },
        FsdeStatus::Ok
    );
    out
}

#[test]
fn lamperti_round_trip_through_handles() {
    let p = params(1.9, 0.05, 2);
    let (mut z, mut v) = (0.0, 0.0);
    unsafe {
        assert_eq!(fsde_lamperti_forward(p, 0.1, 0.4, &mut z), FsdeStatus::Ok);
        assert_eq!(fsde_lamperti_inverse(p, z, 0.4, &mut v), FsdeStatus::Ok);
        fsde_params_free(p);
    }
    assert!(z < 0.0);
    assert!((v - 0.1).abs() < 1e-12);
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { fsde_params_new(-1.0, 0.05, 2, &mut out) },
        FsdeStatus::InvalidArgument
    );
    assert!(out.is_null());
    assert!(last_error().contains("theta0"), "{}", last_error());

    assert_eq!(
        unsafe { fsde_params_new(1.0, 0.05, 7, &mut out) },
        FsdeStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { fsde_params_new(1.0, 0.05, 2, ptr::null_mut()) },
        FsdeStatus::NullPointer
    );

    let mut z = 0.0;
    assert_eq!(
        unsafe { fsde_lamperti_forward(ptr::null(), 0.0, 0.5, &mut z) },
        FsdeStatus::NullPointer
    );
    let p = params(1.9, 0.05, 2);
    assert_eq!(
        unsafe { fsde_lamperti_forward(p, 0.9, 0.5, &mut z) },
        FsdeStatus::Domain
    );
    unsafe { fsde_params_free(p) };
    unsafe { fsde_params_free(ptr::null_mut()) };
}

#[test]
fn moments_and_beta_density() {
    let p = params(1.9, 0.05, 2);
    let times = [0.0, 1.0 / 144.0];
    let values = [0.5, 0.5];
    let mut curve = ptr::null_mut();
    let (mut m1, mut m2, mut lp) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(
            fsde_curve_new(times.as_ptr(), values.as_ptr(), 2, 0.02, &mut curve),
            FsdeStatus::Ok
        );
        assert_eq!(
            fsde_error_moments(p, curve, 0.0, 0.0, 1.0 / 144.0, &mut m1, &mut m2),
            FsdeStatus::Ok
        );
        // uniform on [-0.98, 0.98]
        assert_eq!(
            fsde_beta_logpdf(0.3, 0.0, 0.98 * 0.98 / 3.0, 0.02, &mut lp),
            FsdeStatus::Ok
        );
        fsde_curve_free(curve);
        fsde_params_free(p);
    }
    assert!(m1.abs() < 1e-12);
    assert!(m2 > 0.0 && m2 < 0.01);
    assert!((lp + (2.0f64 * 0.98).ln()).abs() < 1e-9);
}

#[test]
fn simulation_fills_buffer_and_is_seeded() {
    let p = params(1.9, 0.05, 2);
    let times = [0.0, 0.5];
    let values = [0.3, 0.7];
    let grid: Vec<f64> = (0..=12).map(|i| i as f64 / 144.0).collect();
    let mut curve = ptr::null_mut();
    let mut a = vec![f64::NAN; 4 * grid.len()];
    let mut b = a.clone();
    unsafe {
        fsde_curve_new(times.as_ptr(), values.as_ptr(), 2, 0.02, &mut curve);
        for out in [&mut a, &mut b] {
            let s = fsde_simulate(
                p,
                curve,
                grid.as_ptr(),
                grid.len(),
                4,
                9,
                0.0,
                out.as_mut_ptr(),
            );
            assert_eq!(s, FsdeStatus::Ok);
        }
        fsde_curve_free(curve);
        fsde_params_free(p);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|x| (0.0..=1.0).contains(x)));
    assert!((a[0] - 0.3).abs() < 1e-12 && (a[grid.len()] - 0.3).abs() < 1e-12);
}

#[test]
fn dataset_load_reports_missing_file() {
    let path = CString::new("/definitely/not/here.json").unwrap();
    let mut data = ptr::null_mut();
    assert_eq!(
        unsafe { fsde_dataset_load(path.as_ptr(), 0.02, &mut data) },
        FsdeStatus::Io
    );
    assert!(last_error().contains("not/here.json"));
    unsafe { fsde_dataset_free(data) };
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(fsde_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/forecast_sde.h"
    ))
    .unwrap();
    for name in [
        "fsde_params_new",
        "fsde_calibrate",
        "fsde_simulate",
        "FSDE_STATUS_PANIC",
        "typedef struct FsdeParams FsdeParams",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn calibration_on_written_segments() {
    use forecast_sde::model::ModelParams;
    use forecast_sde::synth::{synthetic_segments, SynthConfig};

    let truth = ModelParams::tracking(1.9, 0.05).unwrap();
    let cfg = SynthConfig {
        n_segments: 10,
        seed: 3,
        ..Default::default()
    };
    let segments = synthetic_segments(&truth, &cfg).unwrap();
    let path = std::env::temp_dir().join(format!("fsde-ffi-{}.json", std::process::id()));
    forecast_sde::ingest::write_segments(&path, &segments).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut data = ptr::null_mut();
    let mut fit = FsdeFit::default();
    let method = CString::new("v_beta").unwrap();
    let bad = CString::new("simplex").unwrap();
    unsafe {
        assert_eq!(
            fsde_dataset_load(cpath.as_ptr(), 0.02, &mut data),
            FsdeStatus::Ok
        );
        assert_eq!(
            fsde_calibrate(data, 2, bad.as_ptr(), &mut fit),
            FsdeStatus::InvalidArgument
        );
        assert_eq!(
            fsde_calibrate(data, 2, method.as_ptr(), &mut fit),
            FsdeStatus::Ok
        );
        fsde_dataset_free(data);
    }
    std::fs::remove_file(&path).ok();
    assert!(fit.converged);
    assert!(fit.delta.is_nan());
    assert!(
        (fit.product / 0.095 - 1.0).abs() < 0.3,
        "product {}",
        fit.product
    );
    assert!((fit.aic - (4.0 - 2.0 * fit.loglik)).abs() < 1e-6);
}

#[test]
fn header_compiles_and_links_from_c() {
    use std::path::PathBuf;
    use std::process::Command;

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // tests run from target/<profile>/deps; the shared library sits one level up
    let lib_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    if !lib_dir.join("libforecast_sde_ffi.so").exists() {
        eprintln!("skipping: no shared library in {}", lib_dir.display());
        return;
    }
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("fsde_smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lforecast_sde_ffi", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
