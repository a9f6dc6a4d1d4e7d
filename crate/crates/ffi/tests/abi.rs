use std::ffi::CStr;
use std::ptr;

use dispersal_ffi::*;

fn last_error() -> String {
    let p = dispersal_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn constant_habitat_round_trip() {
    let m = vec![1.0; 17];
    let mut model = ptr::null_mut();
    let status = unsafe { dispersal_model_new(m.as_ptr(), 16, 1.0, 0.5, 2.0, 0.1, 20, false, &mut model) };
    assert_eq!(status, DispersalStatus::Habitat);
    assert!(last_error().contains("trivial"));

    let status = unsafe { dispersal_model_new(m.as_ptr(), 16, 1.0, 0.5, 2.0, 0.1, 20, true, &mut model) };
    assert_eq!(status, DispersalStatus::Ok);
    let (mut nx, mut na) = (0usize, 0usize);
    assert_eq!(unsafe { dispersal_model_dims(model, &mut nx, &mut na) }, DispersalStatus::Ok);
    assert_eq!((nx, na), (17, 21));

    let mut mu1 = 0.0;
    assert_eq!(unsafe { dispersal_model_mu1(model, &mut mu1) }, DispersalStatus::Ok);
    assert!((mu1 + 1.0).abs() < 1e-8);

    let mut state = ptr::null_mut();
    assert_eq!(unsafe { dispersal_steady_state_solve(model, &mut state) }, DispersalStatus::Ok);
    let mut u = vec![0.0; nx * na];
    assert_eq!(unsafe { dispersal_steady_state_density(state, u.as_mut_ptr(), u.len()) }, DispersalStatus::Ok);
    assert!(u.iter().all(|v| (v - 1.0 / 1.5).abs() < 1e-8));
    let mut small = vec![0.0; 3];
    assert_eq!(
        unsafe { dispersal_steady_state_total(state, small.as_mut_ptr(), small.len()) },
        DispersalStatus::BufferTooSmall
    );
    let mut total = vec![0.0; nx];
    assert_eq!(unsafe { dispersal_steady_state_total(state, total.as_mut_ptr(), total.len()) }, DispersalStatus::Ok);
    assert!(total.iter().all(|v| (v - 1.0).abs() < 1e-8));
    let mut res = 1.0;
    assert_eq!(unsafe { dispersal_steady_state_residual(state, &mut res) }, DispersalStatus::Ok);
    assert!(res < 1e-8);
    unsafe {
        dispersal_steady_state_free(state);
        dispersal_model_free(model);
    }
}

#[test]
fn hostile_habitat_reports_an_error_code() {
    let m: Vec<f64> = (0..17).map(|i| -2.0 + (std::f64::consts::PI * i as f64 / 16.0).cos()).collect();
    let mut model = ptr::null_mut();
    let status = unsafe { dispersal_model_new(m.as_ptr(), 16, 1.0, 0.5, 2.0, 0.1, 20, false, &mut model) };
    assert_eq!(status, DispersalStatus::Habitat);
    assert!(model.is_null());
}

#[test]
fn null_arguments_are_rejected() {
    assert_eq!(unsafe { dispersal_model_mu1(ptr::null(), ptr::null_mut()) }, DispersalStatus::NullPointer);
    assert_eq!(unsafe { dispersal_airy_a0(ptr::null_mut()) }, DispersalStatus::NullPointer);
    assert!(last_error().contains("null"));
    unsafe {
        dispersal_model_free(ptr::null_mut());
        dispersal_steady_state_free(ptr::null_mut());
    }
}

#[test]
fn airy_entry_points() {
    let mut a0 = 0.0;
    assert_eq!(unsafe { dispersal_airy_a0(&mut a0) }, DispersalStatus::Ok);
    assert!((a0 - 1.0187929716474710).abs() < 1e-8);
    let mut ai = 0.0;
    assert_eq!(unsafe { dispersal_airy_ai(0.0, &mut ai) }, DispersalStatus::Ok);
    assert!((ai - 0.3550280538878172).abs() < 1e-14);
    assert_eq!(unsafe { dispersal_airy_ai(40.0, &mut ai) }, DispersalStatus::Numerical);
    let v = unsafe { CStr::from_ptr(dispersal_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/dispersal.h")).unwrap();
    for name in [
        "dispersal_model_new",
        "dispersal_model_free",
        "dispersal_steady_state_solve",
        "dispersal_steady_state_density",
        "dispersal_last_error",
        "DISPERSAL_STATUS_OK",
        "typedef struct DispersalModel DispersalModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // Syntax check with the system C compiler when one is installed.
    let out = std::env::temp_dir().join("dispersal_header_check.c");
    std::fs::write(&out, "#include \"dispersal.h\"\nint main(void) { return DISPERSAL_STATUS_OK; }\n").unwrap();
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(dir.join("include"))
        .arg(&out)
        .status()
    {
        assert!(status.success());
    }
}
