use std::ffi::CStr;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pathnorm_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { pn_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn layered(sizes: &[usize]) -> *mut PnGraph {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { pn_graph_layered(sizes.as_ptr(), sizes.len(), &mut g) }, PnStatus::Ok);
    assert!(!g.is_null());
    g
}

#[test]
fn graph_queries() {
    let g = layered(&[2, 3, 2]);
    unsafe {
        assert_eq!(pn_graph_num_nodes(g), 7);
        assert_eq!(pn_graph_num_edges(g), 12);
        assert_eq!(pn_graph_depth(g), 2);
        let (mut s, mut d) = (0, 0);
        assert_eq!(pn_graph_edge(g, 0, &mut s, &mut d), PnStatus::Ok);
        assert_eq!((s, d), (0, 2));
        assert_eq!(pn_graph_edge(g, 12, &mut s, &mut d), PnStatus::Input);
        assert_eq!(pn_graph_num_edges(ptr::null()), 0);
        pn_graph_free(g);
        pn_graph_free(ptr::null_mut());
    }
}

#[test]
fn custom_graph_and_errors() {
    let edges = [0usize, 1, 1, 2, 0, 2];
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(pn_graph_new(3, edges.as_ptr(), 3, [0].as_ptr(), 1, [2].as_ptr(), 1, &mut g), PnStatus::Ok);
        assert_eq!(pn_graph_num_edges(g), 3);
        pn_graph_free(g);

        let cyclic = [0usize, 1, 1, 2, 2, 1];
        let mut h = ptr::null_mut();
        let st = pn_graph_new(3, cyclic.as_ptr(), 3, [0].as_ptr(), 1, [2].as_ptr(), 1, &mut h);
        assert_eq!(st, PnStatus::Structure);
        assert!(h.is_null());
        assert!(last_error().contains("cycle"), "{}", last_error());

        assert_eq!(pn_graph_layered(ptr::null(), 2, &mut h), PnStatus::NullPointer);
        assert_eq!(pn_graph_layered([3usize].as_ptr(), 1, &mut h), PnStatus::Config);
    }
}

#[test]
fn graph_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.txt");
    std::fs::write(&path, "nodes 3 inputs 0 outputs 2\nedge 0 1\nedge 1 2\n").unwrap();
    let c = std::ffi::CString::new(path.to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(pn_graph_from_file(c.as_ptr(), &mut g), PnStatus::Ok);
        assert_eq!(pn_graph_depth(g), 2);
        pn_graph_free(g);
        let missing = std::ffi::CString::new("/nonexistent/graph.txt").unwrap();
        assert_eq!(pn_graph_from_file(missing.as_ptr(), &mut g), PnStatus::Io);
    }
}

#[test]
fn norms_gamma_and_rescaling() {
    let g = layered(&[1, 2, 1]);
    let mut w = [1.0, 2.0, 3.0, 4.0];
    unsafe {
        let mut phi = 0.0;
        assert_eq!(pn_path_norm(g, w.as_ptr(), 4, 2.0, &mut phi), PnStatus::Ok);
        assert!((phi - 73f64.sqrt()).abs() < 1e-12);
        let mut mu = 0.0;
        assert_eq!(pn_group_norm(g, w.as_ptr(), 4, 2.0, f64::INFINITY, &mut mu), PnStatus::Ok);
        assert_eq!(mu, 5.0);
        let mut gamma = [0.0; 4];
        assert_eq!(pn_compute_gamma(g, w.as_ptr(), 4, 2.0, gamma.as_mut_ptr()), PnStatus::Ok);
        assert_eq!(gamma, [9.0, 16.0, 1.0, 4.0]);

        assert_eq!(pn_apply_rescaling(g, w.as_mut_ptr(), 4, 1, 2.0), PnStatus::Ok);
        assert_eq!(w, [2.0, 2.0, 1.5, 4.0]);
        let mut phi2 = 0.0;
        pn_path_norm(g, w.as_ptr(), 4, 2.0, &mut phi2);
        assert!((phi2 - phi).abs() < 1e-12);
        assert_eq!(pn_apply_rescaling(g, w.as_mut_ptr(), 4, 0, 2.0), PnStatus::Input);
        assert_eq!(pn_path_norm(g, w.as_ptr(), 3, 2.0, &mut phi), PnStatus::BufferSize);
        pn_graph_free(g);
    }
}

#[test]
fn init_forward_and_training_step() {
    let g = layered(&[3, 4, 2]);
    unsafe {
        let n = pn_graph_num_edges(g);
        let mut w = vec![0.0; n];
        assert_eq!(pn_init_balanced(g, 7, w.as_mut_ptr(), n), PnStatus::Ok);
        let mut u = w.clone();
        assert_eq!(pn_unbalance(g, u.as_mut_ptr(), n, 3, 1), PnStatus::Ok);
        assert_ne!(u, w);

        let x = [0.2, 0.7, 0.1];
        let (mut sw, mut su) = ([0.0; 2], [0.0; 2]);
        assert_eq!(pn_forward(g, w.as_ptr(), n, x.as_ptr(), 3, sw.as_mut_ptr(), 2), PnStatus::Ok);
        assert_eq!(pn_forward(g, u.as_ptr(), n, x.as_ptr(), 3, su.as_mut_ptr(), 2), PnStatus::Ok);
        for (a, b) in sw.iter().zip(&su) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        let labels = [1usize];
        let st = pn_loss_and_grad(g, w.as_ptr(), n, x.as_ptr(), labels.as_ptr(), 1, 3, &mut loss, grad.as_mut_ptr());
        assert_eq!(st, PnStatus::Ok);
        assert!(loss.is_finite() && loss > 0.0);

        let mut opt = ptr::null_mut();
        assert_eq!(pn_optimizer_new(PnOptimizerKind::PathSgd, 0.1, 2.0, n, &mut opt), PnStatus::Ok);
        let before = w.clone();
        assert_eq!(pn_optimizer_step(opt, g, w.as_mut_ptr(), grad.as_ptr(), n), PnStatus::Ok);
        assert_ne!(w, before);
        assert_eq!(pn_optimizer_clamped_edges(opt), 0);
        pn_optimizer_free(opt);

        let mut bad = ptr::null_mut();
        assert_eq!(pn_optimizer_new(PnOptimizerKind::Sgd, -1.0, 2.0, n, &mut bad), PnStatus::Config);
        assert!(bad.is_null());
        pn_graph_free(g);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(pn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn c_program_links_against_static_library() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libpathnorm_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("examples/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{:?} {}", run.status, String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains(" ok"));
}
