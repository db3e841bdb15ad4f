use std::ffi::{CStr, CString};
use std::fs::File;
use std::path::Path;
use std::ptr;

use spkeval::calibration::{self, TrainOptions};
use spkeval::design::{synth_key, synth_scores, SynthConfig};
use spkeval::{io, metrics};
use spkeval_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(spk_last_error()).to_string_lossy().into_owned() }
}

struct Files {
    _dir: tempfile::TempDir,
    key: CString,
    scores: CString,
    key_set: spkeval::TrialSet,
    score_set: spkeval::ScoreSet,
}

fn files() -> Files {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::uniform(2.0, 20, 50, 7);
    let key = synth_key(&cfg).unwrap();
    let (scores, _) = synth_scores(&key, &cfg, "sysA").unwrap();
    let kp = dir.path().join("key.tsv");
    let sp = dir.path().join("sysA.tsv");
    io::write_key(&key, File::create(&kp).unwrap()).unwrap();
    io::write_scores(&scores, File::create(&sp).unwrap()).unwrap();
    Files { key: cpath(&kp), scores: cpath(&sp), key_set: key, score_set: scores, _dir: dir }
}

#[test]
fn split_metrics_match_library() {
    let tar = [1.5, 0.3, 2.2, -0.4, 0.9];
    let non = [-1.0, 0.1, -2.5, 0.5];
    let mut v = 0.0;
    unsafe {
        assert_eq!(spk_cllr_split(tar.as_ptr(), tar.len(), non.as_ptr(), non.len(), &mut v), SpkStatus::Ok);
        assert_eq!(v, metrics::cllr_split(&tar, &non).unwrap());
        assert_eq!(spk_min_cllr_split(tar.as_ptr(), tar.len(), non.as_ptr(), non.len(), &mut v), SpkStatus::Ok);
        assert_eq!(v, metrics::min_cllr_split(&tar, &non).unwrap());
        assert_eq!(spk_eer_rocch_split(tar.as_ptr(), tar.len(), non.as_ptr(), non.len(), &mut v), SpkStatus::Ok);
        assert_eq!(v, metrics::eer_rocch_split(&tar, &non).unwrap());
        assert_eq!(spk_eer_naive_split(tar.as_ptr(), tar.len(), non.as_ptr(), non.len(), &mut v), SpkStatus::Ok);
        assert_eq!(v, metrics::eer_naive_split(&tar, &non).unwrap());
    }
}

#[test]
fn zero_llrs_cost_one_bit() {
    let zeros = [0.0; 8];
    let mut v = f64::NAN;
    let s = unsafe { spk_cllr_split(zeros.as_ptr(), 8, zeros.as_ptr(), 8, &mut v) };
    assert_eq!(s, SpkStatus::Ok);
    assert!((v - 1.0).abs() < 1e-15);
}

#[test]
fn error_codes_and_messages() {
    let mut v = 0.0;
    let tar = [1.0];
    unsafe {
        assert_eq!(spk_cllr_split(tar.as_ptr(), 1, ptr::null(), 0, &mut v), SpkStatus::Degenerate);
        assert!(last_error().contains("degenerate"));
        assert_eq!(spk_cllr_split(ptr::null(), 3, tar.as_ptr(), 1, &mut v), SpkStatus::NullPointer);
        assert_eq!(spk_cllr_split(tar.as_ptr(), 1, tar.as_ptr(), 1, ptr::null_mut()), SpkStatus::NullPointer);

        let mut key = ptr::null_mut();
        let missing = CString::new("/nonexistent/key.tsv").unwrap();
        assert_eq!(spk_trialset_load(missing.as_ptr(), &mut key), SpkStatus::Io);
        assert!(key.is_null());
        assert!(last_error().contains("/nonexistent/key.tsv"));

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "trial_id\tscore\nt1\tabc\n").unwrap();
        let mut scores = ptr::null_mut();
        assert_eq!(spk_scoreset_load(cpath(&bad).as_ptr(), ptr::null(), &mut scores), SpkStatus::Syntax);
        assert!(last_error().contains("line 2"));

        let invalid = [0x66u8, 0xff, 0x00];
        assert_eq!(spk_trialset_load(invalid.as_ptr().cast(), &mut key), SpkStatus::InvalidUtf8);

        spk_trialset_free(ptr::null_mut());
        assert_eq!(spk_trialset_len(ptr::null()), 0);
        assert!(spk_model_offset(ptr::null()).is_nan());
    }
}

#[test]
fn version_is_a_string() {
    let v = unsafe { CStr::from_ptr(spk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn calibrate_and_evaluate_through_handles() {
    let f = files();
    unsafe {
        let mut key = ptr::null_mut();
        assert_eq!(spk_trialset_load(f.key.as_ptr(), &mut key), SpkStatus::Ok);
        assert_eq!(spk_trialset_len(key), f.key_set.len());
        let mut scores = ptr::null_mut();
        assert_eq!(spk_scoreset_load(f.scores.as_ptr(), ptr::null(), &mut scores), SpkStatus::Ok);
        assert_eq!(spk_scoreset_len(scores), f.score_set.scores.len());

        let sets = [scores as *const SpkScoreSet];
        let mut model = ptr::null_mut();
        let mut converged = false;
        assert_eq!(spk_model_train(sets.as_ptr(), 1, key, 0.5, -1.0, &mut model, &mut converged), SpkStatus::Ok);
        assert!(converged);

        let (expected, _) = calibration::train(&[&f.score_set], &f.key_set, &TrainOptions::default()).unwrap();
        let mut w = [0.0; 4];
        assert_eq!(spk_model_weights(model, w.as_mut_ptr(), w.len()), 1);
        assert_eq!(w[0], expected.weights[0]);
        assert_eq!(spk_model_offset(model), expected.offset);

        let mut llrs = ptr::null_mut();
        assert_eq!(spk_model_apply(model, sets.as_ptr(), 1, &mut llrs), SpkStatus::Ok);
        assert_eq!(spk_llrset_len(llrs), f.key_set.len());
        let lib_llrs = calibration::apply(&expected, &[&f.score_set]).unwrap();

        let first = f.key_set.iter().next().unwrap().trial_id.clone();
        let mut v = 0.0;
        let id = CString::new(first.as_str()).unwrap();
        assert_eq!(spk_llrset_get(llrs, id.as_ptr(), &mut v), SpkStatus::Ok);
        assert_eq!(v, lib_llrs.llrs[&first]);
        let nope = CString::new("nope").unwrap();
        assert_eq!(spk_llrset_get(llrs, nope.as_ptr(), &mut v), SpkStatus::Coverage);

        let (mut c, mut m, mut er, mut en) = (0.0, 0.0, 0.0, 0.0);
        assert_eq!(spk_cllr(llrs, key, &mut c), SpkStatus::Ok);
        assert_eq!(spk_min_cllr(llrs, key, &mut m), SpkStatus::Ok);
        assert_eq!(spk_eer_rocch(llrs, key, &mut er), SpkStatus::Ok);
        assert_eq!(spk_eer_naive(llrs, key, &mut en), SpkStatus::Ok);
        assert_eq!(c, metrics::cllr(&lib_llrs, &f.key_set).unwrap());
        assert!(m <= c + 1e-12);
        assert!(c < 1.0);
        assert!((er - en).abs() < 0.05);

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("llr.tsv");
        assert_eq!(spk_llrset_save(llrs, cpath(&out).as_ptr()), SpkStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(spk_llrset_load(cpath(&out).as_ptr(), ptr::null(), &mut back), SpkStatus::Ok);
        let mut c2 = 0.0;
        assert_eq!(spk_cllr(back, key, &mut c2), SpkStatus::Ok);
        assert_eq!(c, c2);

        spk_llrset_free(back);
        spk_llrset_free(llrs);
        spk_model_free(model);
        spk_scoreset_free(scores);
        spk_trialset_free(key);
    }
}

#[test]
fn train_rejects_bad_prior_and_empty_input() {
    let f = files();
    unsafe {
        let mut key = ptr::null_mut();
        let mut scores = ptr::null_mut();
        spk_trialset_load(f.key.as_ptr(), &mut key);
        spk_scoreset_load(f.scores.as_ptr(), ptr::null(), &mut scores);
        let sets = [scores as *const SpkScoreSet];
        let mut model = ptr::null_mut();
        assert_eq!(
            spk_model_train(sets.as_ptr(), 1, key, 1.5, 0.0, &mut model, ptr::null_mut()),
            SpkStatus::InvalidParams
        );
        assert_eq!(
            spk_model_train(sets.as_ptr(), 0, key, 0.5, 0.0, &mut model, ptr::null_mut()),
            SpkStatus::InvalidParams
        );
        assert!(model.is_null());
        spk_scoreset_free(scores);
        spk_trialset_free(key);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/spkeval.h")).unwrap();
    for name in [
        "spk_last_error", "spk_version", "spk_trialset_load", "spk_scoreset_load", "spk_llrset_load",
        "spk_llrset_save", "spk_cllr", "spk_min_cllr", "spk_eer_rocch", "spk_eer_naive",
        "spk_cllr_split", "spk_min_cllr_split", "spk_eer_rocch_split", "spk_eer_naive_split",
        "spk_model_train", "spk_model_apply", "spk_model_free", "SPK_STATUS_OK",
        "typedef struct SpkModel SpkModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
