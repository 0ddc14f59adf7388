use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use glann::config::PipelineConfig;
use glann::datasets::ImageShape;
use glann::generator::{Generator, GeneratorKind, GeneratorSpec};
use glann::glo::init_latent_table;
use glann::imle::{MapperNetwork, MapperSpec};
use glann::pipeline::Bundle;
use glann::rng::standard_normal;
use glann::synthesis::{sample_images, sample_noise};
use glann_ffi::*;

fn bundle(with_mapper: bool) -> Bundle {
    let shape = ImageShape::new(1, 4, 4);
    let spec = GeneratorSpec { kind: GeneratorKind::Mlp, hidden: 6, channels: 1 };
    let generator = Generator::new(&spec, 3, shape, 1).unwrap();
    let mapper = with_mapper.then(|| MapperNetwork::new(&MapperSpec { hidden: 5, ..Default::default() }, 2, 3, 2).unwrap());
    Bundle { config: PipelineConfig::default(), epoch: 1, generator, table: Some(init_latent_table(5, 3, 0).unwrap()), mapper }
}

fn saved(dir: &Path, with_mapper: bool) -> CString {
    let p = dir.join(if with_mapper { "m.ckpt" } else { "g.ckpt" });
    bundle(with_mapper).save(&p).unwrap();
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = glann_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(path: &CString) -> *mut GlannModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { glann_model_load(path.as_ptr(), &mut m) }, GlannStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn sampling_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let m = load(&saved(tmp.path(), true));
    let (mut c, mut h, mut w, mut d) = (0, 0, 0, 0);
    assert_eq!(unsafe { glann_model_image_shape(m, &mut c, &mut h, &mut w, &mut d) }, GlannStatus::Ok);
    assert_eq!((c, h, w, d), (1, 4, 4, 2));
    assert_eq!(unsafe { glann_model_image_shape(m, ptr::null_mut(), ptr::null_mut(), &mut w, ptr::null_mut()) }, GlannStatus::Ok);

    let mut out = vec![0.0; 3 * 16];
    assert_eq!(unsafe { glann_model_sample(m, 3, 9, out.as_mut_ptr(), out.len()) }, GlannStatus::Ok);
    let expected = sample_images(&bundle(true).model().unwrap(), 3, 9).unwrap();
    assert_eq!(out, expected.pixels.iter().copied().collect::<Vec<_>>());

    let e = sample_noise(3, 2, 9);
    let mut decoded = vec![0.0; 3 * 16];
    let st = unsafe { glann_model_decode_noise(m, e.as_ptr(), 3, decoded.as_mut_ptr(), decoded.len()) };
    assert_eq!(st, GlannStatus::Ok);
    assert_eq!(decoded, out);

    let st = unsafe { glann_model_sample(m, 3, 9, out.as_mut_ptr(), out.len() - 1) };
    assert_eq!(st, GlannStatus::Argument);
    assert!(last_error().contains("buffer"));
    assert_eq!(unsafe { glann_model_sample(m, 1, 0, ptr::null_mut(), 16) }, GlannStatus::Argument);
    unsafe { glann_model_free(m) };
    unsafe { glann_model_free(ptr::null_mut()) };
}

#[test]
fn load_failures_map_to_status_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let missing = CString::new(tmp.path().join("nope.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { glann_model_load(missing.as_ptr(), &mut m) }, GlannStatus::Format);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let path = saved(tmp.path(), true);
    let p = PathBuf::from(path.to_str().unwrap());
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[40] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    assert_eq!(unsafe { glann_model_load(path.as_ptr(), &mut m) }, GlannStatus::Format);
    assert!(last_error().contains("checksum"));

    let glo_only = saved(tmp.path(), false);
    assert_eq!(unsafe { glann_model_load(glo_only.as_ptr(), &mut m) }, GlannStatus::State);
    assert_eq!(unsafe { glann_model_load(ptr::null(), &mut m) }, GlannStatus::Argument);
}

#[test]
fn metrics_from_features() {
    let a = standard_normal(40, 3, 1);
    let b = standard_normal(40, 3, 2) + 0.5;
    let mut f = -1.0;
    assert_eq!(unsafe { glann_fid_from_features(a.as_ptr(), 40, b.as_ptr(), 40, 3, &mut f) }, GlannStatus::Ok);
    let want = glann::eval::fid(&glann::eval::gaussian_stats(a.view()).unwrap(), &glann::eval::gaussian_stats(b.view()).unwrap()).unwrap();
    assert_eq!(f, want);
    assert_eq!(unsafe { glann_fid_from_features(a.as_ptr(), 1, b.as_ptr(), 40, 3, &mut f) }, GlannStatus::Argument);

    let (mut p, mut r) = (vec![0.0; 11], vec![0.0; 11]);
    let (mut f8, mut f18) = (0.0, 0.0);
    let st = unsafe { glann_prd_from_features(a.as_ptr(), a.as_ptr(), 40, 3, 4, 11, 0, p.as_mut_ptr(), r.as_mut_ptr(), &mut f8, &mut f18) };
    assert_eq!(st, GlannStatus::Ok);
    assert_eq!((p[5], r[5], f8, f18), (1.0, 1.0, 1.0, 1.0));
    let st = unsafe { glann_prd_from_features(a.as_ptr(), b.as_ptr(), 40, 3, 1, 11, 0, p.as_mut_ptr(), r.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, GlannStatus::Argument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/glann.h")).unwrap();
    for f in [
        "glann_last_error",
        "glann_model_load",
        "glann_model_free",
        "glann_model_image_shape",
        "glann_model_sample",
        "glann_model_decode_noise",
        "glann_fid_from_features",
        "glann_prd_from_features",
        "typedef struct GlannModel GlannModel",
        "GLANN_STATUS_PANIC = 5",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}

/// Compile a C program against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    let lib_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    if !lib_dir.join("libglann_ffi.so").exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no shared library or C compiler");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = saved(tmp.path(), true);
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "glann.h"
int main(int argc, char **argv) {
    GlannModel *m = NULL;
    if (glann_model_load(argv[1], &m) != GLANN_STATUS_OK) { fprintf(stderr, "%s\n", glann_last_error()); return 10; }
    size_t c, h, w, d;
    glann_model_image_shape(m, &c, &h, &w, &d);
    double px[2 * 16];
    GlannStatus st = glann_model_sample(m, 2, 7, px, c * h * w * 2);
    glann_model_free(m);
    if (st != GLANN_STATUS_OK) return 11;
    for (int i = 0; i < 32; i++) if (px[i] < -1.0 || px[i] > 1.0) return 12;
    printf("%zu %zu %zu %zu\n", c, h, w, d);
    return glann_model_load("/nonexistent", &m) == GLANN_STATUS_FORMAT ? 0 : 13;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lglann_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).arg(ckpt.to_str().unwrap()).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "{:?} {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1 4 4 2");
}
