use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sigblock_ffi::*;

const TINY_CONFIG: &str = "
[embedding]
dim = 16
bucket_count = 4096
[encoder]
hidden_size = 4
[training]
max_iterations = 20
batch_size = 4
negatives_per_pair = 3
";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn fixture(dir: &Path) -> (CString, CString) {
    let records = dir.join("records.csv");
    let labels = dir.join("labels.csv");
    let mut rows = String::from("id,title,artist\n");
    let mut pairs = String::from("id_a,id_b\n");
    let titles = [
        "blue river",
        "golden sun",
        "night train",
        "stone garden",
        "silver moon",
        "wild rose",
    ];
    let artists = ["kora vel", "the dumas", "mira sol", "trak ben", "lou ran", "sami ek"];
    for (i, (t, a)) in titles.iter().zip(artists).enumerate() {
        rows.push_str(&format!("a{i},{t},{a}\n"));
        rows.push_str(&format!("b{i},{t} [remix],{a}\n"));
        pairs.push_str(&format!("a{i},b{i}\n"));
    }
    std::fs::write(&records, rows).unwrap();
    std::fs::write(&labels, pairs).unwrap();
    (c(records.to_str().unwrap()), c(labels.to_str().unwrap()))
}

fn last_error() -> String {
    let p = sb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn train_block_and_read_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (records, labels) = fixture(dir.path());
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            sb_dataset_load(records.as_ptr(), ptr::null(), ptr::null(), &mut ds),
            SbStatus::Ok
        );
        assert_eq!(sb_dataset_len(ds), 12);

        let cfg = c(TINY_CONFIG);
        let mut model = ptr::null_mut();
        let st = sb_model_train(ds, labels.as_ptr(), cfg.as_ptr(), &mut model);
        assert_eq!(st, SbStatus::Ok, "{}", last_error());
        assert!(sb_model_signature_count(model) >= 1);

        let mut sim = 0.0;
        assert_eq!(sb_model_similarity(model, ds, 0, 1, &mut sim), SbStatus::Ok);
        assert!((-1.0..=1.0 + 1e-9).contains(&sim));

        let model_path = c(dir.path().join("m.bin").to_str().unwrap());
        assert_eq!(sb_model_save(model, model_path.as_ptr()), SbStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(sb_model_load(model_path.as_ptr(), &mut loaded), SbStatus::Ok);

        let mut cands = ptr::null_mut();
        assert_eq!(sb_block(loaded, ds, 0.5, 0, &mut cands), SbStatus::Ok);
        let n = sb_candidates_len(cands);
        for i in 0..n {
            let (mut a, mut b, mut s, mut cos) = (ptr::null(), ptr::null(), 0i32, 0.0f64);
            assert_eq!(
                sb_candidates_get(cands, i, &mut a, &mut b, &mut s, &mut cos),
                SbStatus::Ok
            );
            let (a, b) = (CStr::from_ptr(a).to_str().unwrap(), CStr::from_ptr(b).to_str().unwrap());
            assert!(a < b);
            assert!(s >= 0 && cos >= 0.5);
        }
        let (mut a, mut b, mut s, mut cos) = (ptr::null(), ptr::null(), 0i32, 0.0f64);
        assert_eq!(
            sb_candidates_get(cands, n, &mut a, &mut b, &mut s, &mut cos),
            SbStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));

        let csv_path = dir.path().join("c.csv");
        let csv_c = c(csv_path.to_str().unwrap());
        assert_eq!(sb_candidates_write_csv(cands, csv_c.as_ptr()), SbStatus::Ok);
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(text.lines().count(), n + 1);

        sb_candidates_free(cands);
        sb_model_free(loaded);
        sb_model_free(model);
        sb_dataset_free(ds);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = c("/nonexistent/records.csv");
        assert_eq!(
            sb_dataset_load(missing.as_ptr(), ptr::null(), ptr::null(), &mut ds),
            SbStatus::Io
        );
        assert!(last_error().contains("/nonexistent/records.csv"));
        assert!(ds.is_null());

        assert_eq!(
            sb_dataset_load(ptr::null(), ptr::null(), ptr::null(), &mut ds),
            SbStatus::NullPointer
        );
        let odd = c("records.parquet");
        assert_eq!(
            sb_dataset_load(odd.as_ptr(), ptr::null(), ptr::null(), &mut ds),
            SbStatus::InvalidArgument
        );

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"not a model").unwrap();
        let bad = c(bad.to_str().unwrap());
        let mut model = ptr::null_mut();
        assert_eq!(sb_model_load(bad.as_ptr(), &mut model), SbStatus::Format);

        let (records, labels) = fixture(dir.path());
        assert_eq!(
            sb_dataset_load(records.as_ptr(), ptr::null(), ptr::null(), &mut ds),
            SbStatus::Ok
        );
        let cfg = c("[training]\nlearning_rate = -1.0\n");
        assert_eq!(
            sb_model_train(ds, labels.as_ptr(), cfg.as_ptr(), &mut model),
            SbStatus::Config
        );
        assert!(last_error().contains("learning_rate"));
        sb_dataset_free(ds);

        sb_dataset_free(ptr::null_mut());
        sb_model_free(ptr::null_mut());
        sb_candidates_free(ptr::null_mut());
        assert_eq!(sb_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn last_error_is_thread_local() {
    unsafe {
        let mut ds = ptr::null_mut();
        sb_dataset_load(ptr::null(), ptr::null(), ptr::null(), &mut ds);
    }
    let other = std::thread::spawn(|| sb_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(last_error().contains("path is null"));
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(sb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sigblock.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "sb_dataset_load",
        "sb_model_train",
        "sb_block",
        "sb_candidates_get",
        "sb_last_error_message",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler available; header syntax not checked");
        return;
    };
    assert!(status.success());
}
