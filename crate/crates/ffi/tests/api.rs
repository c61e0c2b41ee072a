use meshpdr_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

fn last_error() -> String {
    let mut buf = [0 as c_char; 512];
    let n = unsafe { meshpdr_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n < buf.len());
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn small_config(mode: MeshpdrMode) -> *mut MeshpdrConfig {
    let cfg = meshpdr_config_new();
    let spec = CString::new("sphere:r=6,dims=16").unwrap();
    unsafe {
        assert_eq!(meshpdr_config_set_phantom(cfg, spec.as_ptr()), MeshpdrStatus::Ok);
        assert_eq!(meshpdr_config_set_sizing(cfg, 2.0, 2.0), MeshpdrStatus::Ok);
        assert_eq!(meshpdr_config_set_mode(cfg, mode as u32), MeshpdrStatus::Ok);
    }
    cfg
}

fn run(cfg: *mut MeshpdrConfig) -> *mut MeshpdrResult {
    let mut res = ptr::null_mut();
    let st = unsafe { meshpdr_run(cfg, &mut res) };
    assert_eq!(st, MeshpdrStatus::Ok, "{}", last_error());
    assert!(!res.is_null());
    res
}

fn dump(res: *mut MeshpdrResult) -> Vec<u8> {
    let mut n = 0usize;
    unsafe {
        assert_eq!(meshpdr_result_dump(res, ptr::null_mut(), 0, &mut n), MeshpdrStatus::Ok);
        let mut buf = vec![0u8; n];
        assert_eq!(meshpdr_result_dump(res, buf.as_mut_ptr(), n, &mut n), MeshpdrStatus::Ok);
        buf
    }
}

#[test]
fn run_report_and_dump_through_the_c_api() {
    let cfg = small_config(MeshpdrMode::Seq);
    let res = run(cfg);
    unsafe { meshpdr_config_free(cfg) };

    let mut c = MeshpdrCounts::default();
    assert_eq!(unsafe { meshpdr_result_counts(res, &mut c) }, MeshpdrStatus::Ok);
    assert_eq!(c.audits_passed, 1);
    assert!(c.elements > 0 && c.kept_elements <= c.elements && c.vertices >= 8);

    let mut n = 0usize;
    unsafe {
        assert_eq!(
            meshpdr_result_report_json(res, ptr::null_mut(), 0, &mut n),
            MeshpdrStatus::Ok
        );
        let mut small = vec![0u8; n - 1];
        assert_eq!(
            meshpdr_result_report_json(res, small.as_mut_ptr(), small.len(), &mut n),
            MeshpdrStatus::BufferTooSmall
        );
        let mut buf = vec![0u8; n];
        assert_eq!(
            meshpdr_result_report_json(res, buf.as_mut_ptr(), n, &mut n),
            MeshpdrStatus::Ok
        );
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["elements"].as_u64(), Some(c.elements));
    }

    let bytes = dump(res);
    let mut bad = u64::MAX;
    assert_eq!(
        unsafe { meshpdr_audit_dump(bytes.as_ptr(), bytes.len(), 1, &mut bad) },
        MeshpdrStatus::Ok
    );
    assert_eq!(bad, 0);
    unsafe { meshpdr_result_free(res) };
}

#[test]
fn seq_and_single_thread_shared_dumps_match() {
    let a = small_config(MeshpdrMode::Seq);
    let b = small_config(MeshpdrMode::Shared);
    let (ra, rb) = (run(a), run(b));
    assert_eq!(dump(ra), dump(rb));
    unsafe {
        meshpdr_result_free(ra);
        meshpdr_result_free(rb);
        meshpdr_config_free(a);
        meshpdr_config_free(b);
    }
}

#[test]
fn bad_arguments_map_to_status_codes() {
    unsafe {
        let cfg = meshpdr_config_new();
        assert_eq!(meshpdr_config_set_mode(cfg, 7), MeshpdrStatus::InvalidArgument);
        assert!(last_error().contains("unknown mode"));
        assert_eq!(
            meshpdr_config_set_sizing(cfg, -1.0, 2.0),
            MeshpdrStatus::InvalidArgument
        );
        assert_eq!(meshpdr_config_set_sizing(cfg, 1.0, 1.5), MeshpdrStatus::InvalidArgument);
        assert_eq!(meshpdr_config_set_octree_depth(cfg, 99), MeshpdrStatus::InvalidArgument);
        assert_eq!(
            meshpdr_config_set_parallelism(cfg, 0, 1, 1),
            MeshpdrStatus::InvalidArgument
        );
        assert_eq!(
            meshpdr_config_set_phantom(cfg, ptr::null()),
            MeshpdrStatus::NullArgument
        );
        let junk = CString::new("cube").unwrap();
        assert_eq!(
            meshpdr_config_set_phantom(cfg, junk.as_ptr()),
            MeshpdrStatus::InvalidArgument
        );
        assert_eq!(meshpdr_config_set_mode(ptr::null_mut(), 0), MeshpdrStatus::NullArgument);

        let missing = CString::new("/nonexistent/image.dmi").unwrap();
        assert_eq!(meshpdr_config_set_image_path(cfg, missing.as_ptr()), MeshpdrStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(meshpdr_run(cfg, &mut res), MeshpdrStatus::ImageError);
        assert!(res.is_null());
        assert!(!last_error().is_empty());
        meshpdr_config_free(cfg);

        let mut n = 0u64;
        let junk = [1u8, 2, 3];
        assert_eq!(
            meshpdr_audit_dump(junk.as_ptr(), junk.len(), 0, &mut n),
            MeshpdrStatus::InvalidArgument
        );
        meshpdr_config_free(ptr::null_mut());
        meshpdr_result_free(ptr::null_mut());
    }
}

#[test]
fn corrupted_dump_fails_audit() {
    let cfg = small_config(MeshpdrMode::Seq);
    let res = run(cfg);
    let mut bytes = dump(res);
    unsafe {
        meshpdr_result_free(res);
        meshpdr_config_free(cfg);
    }
    // First tet record: header, leaf list (none), vertex records, then the
    // tet's 4 vertex indices followed by its 4 neighbors.
    let nleaves = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let nverts = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let tet0 = 72 + 4 * nleaves + 32 * nverts;
    let slot = (0..4)
        .map(|f| tet0 + 16 + 4 * f)
        .find(|&at| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) < u32::MAX - 1)
        .expect("tet 0 has an interior neighbor");
    let n = u32::from_le_bytes(bytes[slot..slot + 4].try_into().unwrap());
    bytes[slot..slot + 4].copy_from_slice(&(n ^ 1).to_le_bytes());
    let mut bad = 0u64;
    let st = unsafe { meshpdr_audit_dump(bytes.as_ptr(), bytes.len(), 0, &mut bad) };
    assert_eq!(st, MeshpdrStatus::AuditFailed);
    assert!(bad > 0);
    assert!(last_error().contains("tet"));
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(meshpdr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles the C smoke program against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("meshpdr.h").exists(), "header not generated");
    let exe_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = exe_dir.join("libmeshpdr_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("meshpdr_smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header_dir)
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&out).output().unwrap();
    assert!(
        run.status.success(),
        "smoke exited {:?}: {}",
        run.status,
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    assert!(fields[1].parse::<u64>().unwrap() > 0);
    assert_eq!(fields[2], "1");
}
