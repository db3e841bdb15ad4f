use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spkeval::io::{parse_key, parse_llrs, parse_report, parse_scores, write_inventory, write_responses};
use spkeval::perceptual::{Decision, PerceptualResponse};
use spkeval::{SpeakerId, Stimulus, Style};

fn spkeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spkeval")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = spkeval(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth(dir: &Path, name: &str, seed: &str, dprime: &str) {
    ok(&[
        "synth", "--key", &p(dir, "key.tsv"), "--speakers", "12", "--trials-per-cell", "60",
        "--dprime-rr", dprime, "--dprime-cc", dprime, "--dprime-rc", "1", "--speaker-sd", "0.5",
        "--seed", seed, "--out", &p(dir, name),
    ]);
}

#[test]
fn help_and_usage_errors() {
    let out = spkeval(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("calibrate"));
    let out = spkeval(&["metrics", "--llr", "a", "--key", "b", "--report", "c", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(spkeval(&["nosuchcommand"]).status.code(), Some(1));
}

#[test]
fn metrics_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "scores.tsv", "1", "3");
    ok(&["calibrate", "--scores", &p(d, "scores.tsv"), "--key", &p(d, "key.tsv"), "--out", &p(d, "llr.tsv")]);
    let out = ok(&["metrics", "--llr", &p(d, "llr.tsv"), "--key", &p(d, "key.tsv"), "--report", &p(d, "r.json")]);
    assert!(out.stdout.is_empty());
    let report = parse_report(fs::File::open(d.join("r.json")).unwrap()).unwrap();
    assert_eq!((report.n_tar, report.n_non), (180, 180));
    assert!(report.min_cllr <= report.cllr);
    assert!(report.per_condition.is_none());
}

#[test]
fn coverage_mismatch_names_first_missing_trial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "scores.tsv", "2", "3");
    let key = parse_key(fs::File::open(d.join("key.tsv")).map(std::io::BufReader::new).unwrap()).unwrap();
    let missing = key.trials()[5].trial_id.clone();
    let text = fs::read_to_string(d.join("scores.tsv")).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with(&format!("{missing}\t"))).collect();
    fs::write(d.join("partial.tsv"), kept.join("\n") + "\n").unwrap();
    let out = spkeval(&["calibrate", "--scores", &p(d, "partial.tsv"), "--key", &p(d, "key.tsv"), "--out", &p(d, "x.tsv")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&missing));
    assert!(!d.join("x.tsv").exists());
}

#[test]
fn syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("k.tsv"), "trial_id\tstim_a\tstim_b\tspk_a\tspk_b\tstyle_a\tstyle_b\tlabel\nt1\ts1\ts2\tA\tB\tread\n").unwrap();
    fs::write(d.join("l.tsv"), "trial_id\tllr\nt1\t0.5\n").unwrap();
    let out = spkeval(&["metrics", "--llr", &p(d, "l.tsv"), "--key", &p(d, "k.tsv"), "--report", "-"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn evaluation_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "sysA.tsv", "3", "2.5");
    // second system on the same key
    ok(&[
        "synth", "--key", &p(d, "key.tsv"), "--dprime-rr", "1.5", "--dprime-cc", "1.5", "--dprime-rc", "0.5",
        "--seed", "4", "--out", &p(d, "sysB.tsv"), "--system-id", "sysB",
    ]);
    let key = &p(d, "key.tsv");
    ok(&["calibrate", "--scores", &p(d, "sysA.tsv"), "--key", key, "--out", &p(d, "a.llr"), "--model-out", &p(d, "a.json")]);
    ok(&["calibrate", "--scores", &p(d, "sysB.tsv"), "--key", key, "--per-condition", "--out", &p(d, "b.llr")]);
    ok(&["fuse", "--scores", &p(d, "sysA.tsv"), "--scores", &p(d, "sysB.tsv"), "--key", key, "--out", &p(d, "f.llr"), "--model-out", &p(d, "f.json")]);

    let fused = parse_llrs(std::io::BufReader::new(fs::File::open(d.join("f.llr")).unwrap()), "f").unwrap();
    assert_eq!(fused.llrs.len(), 360);
    let model: Value = serde_json::from_str(&fs::read_to_string(d.join("f.json")).unwrap()).unwrap();
    assert_eq!(model["model"]["system_ids"], serde_json::json!(["sysA", "sysB"]));
    assert_eq!(model["model"]["weights"].as_array().unwrap().len(), 2);

    for (llr, rep) in [("a.llr", "a.rep"), ("b.llr", "b.rep"), ("f.llr", "f.rep")] {
        ok(&["metrics", "--llr", &p(d, llr), "--key", key, "--per-condition", "--hist-bin", "0.5", "--report", &p(d, rep)]);
    }
    let rep = parse_report(fs::File::open(d.join("f.rep")).unwrap()).unwrap();
    let conds: Vec<&String> = rep.per_condition.as_ref().unwrap().keys().collect();
    assert_eq!(conds, ["RR", "CC", "RC"]);
    assert!(rep.distributions.is_some());

    let out = ok(&["report", "--input", &p(d, "a.rep"), "--input", &p(d, "f.rep")]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 4);
    assert!(table.starts_with("system_id\tcondition\t"));

    for (llr, out) in [("a.llr", "pa.tsv"), ("b.llr", "pb.tsv"), ("f.llr", "pf.tsv")] {
        ok(&["speaker", "--llr", &p(d, llr), "--key", key, "--out", &p(d, out)]);
    }
    let summary = fs::read_to_string(d.join("pa.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 13);
    assert_eq!(summary.lines().filter(|l| l.ends_with("\teasy")).count(), 4);
    assert_eq!(summary.lines().filter(|l| l.ends_with("\thard")).count(), 4);

    ok(&["confusion", "--p1", &p(d, "pa.tsv"), "--p2", &p(d, "pb.tsv"), "--p3", &p(d, "pf.tsv"), "--out", &p(d, "m.tsv")]);
    let m = fs::read_to_string(d.join("m.tsv")).unwrap();
    assert_eq!(m.lines().count(), 10);
    let total: usize = m.lines().skip(1).map(|l| l.split('\t').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 12);

    let out = ok(&["stats", "mcnemar", "--llr1", &p(d, "a.llr"), "--llr2", &p(d, "b.llr"), "--key", key]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["p_value"].as_f64().unwrap() <= 1.0);
    assert!(r["method"].as_str().unwrap().starts_with("McNemar"));

    let out = ok(&["stats", "ks", "--scores1", &p(d, "sysA.tsv"), "--scores2", &p(d, "sysB.tsv"), "--key", key, "--class", "non"]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["detail"]["n1"], 180);
    assert_eq!(r["method"], "KS2Asymptotic");
}

fn inventory_file(dir: &Path) -> PathBuf {
    let mut stimuli = Vec::new();
    for t in 0..8 {
        let spk = SpeakerId::new(format!("S{t}")).unwrap();
        for i in 0..7 {
            stimuli.push(Stimulus::new(format!("S{t}r{i}"), spk.clone(), Style::Read).unwrap());
            stimuli.push(Stimulus::new(format!("S{t}c{i}"), spk.clone(), Style::Conversation).unwrap());
        }
    }
    let path = dir.join("inventory.tsv");
    let mut buf = Vec::new();
    write_inventory(&stimuli, &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

#[test]
fn design_verify_and_unfold() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let inv = inventory_file(d);
    let inv = inv.to_str().unwrap();
    ok(&["design", "--inventory", inv, "--listeners", "3", "--subset", "4", "--seed", "9", "--out", &p(d, "plan")]);
    ok(&["design", "--inventory", inv, "--listeners", "3", "--subset", "4", "--seed", "9", "--out", &p(d, "plan2")]);
    for f in ["plan.json", "key.tsv", "L001.tsv", "L002.tsv", "L003.tsv"] {
        assert_eq!(fs::read(d.join("plan").join(f)).unwrap(), fs::read(d.join("plan2").join(f)).unwrap(), "{f}");
    }
    let manifest = fs::read_to_string(d.join("plan/L001.tsv")).unwrap();
    assert_eq!(manifest.lines().next().unwrap(), "trial_index\ttrial_id\tstim_a\tstim_b\torder");
    assert_eq!(manifest.lines().count(), 25);
    ok(&["verify", "--plan", &p(d, "plan"), "--inventory", inv, "--partners-out", &p(d, "partners.json")]);

    // duplicate a stimulus inside one listener's plan: stim_b of row 1 becomes
    // stim_b of row 2 in both manifest and key
    let key_text = fs::read_to_string(d.join("plan/key.tsv")).unwrap();
    let key = parse_key(key_text.as_bytes()).unwrap();
    let l1: Vec<_> = key.iter().filter(|t| t.trial_id.starts_with("L001")).collect();
    let a = l1[0];
    let reused = l1
        .iter()
        .filter(|t| t.trial_id != a.trial_id)
        .flat_map(|t| [&t.stim_a, &t.stim_b])
        .find(|s| s.speaker == a.stim_b.speaker && s.style == a.stim_b.style && s.id != a.stim_a.id)
        .unwrap();
    let edit = |text: &str| {
        text.replace(
            &format!("{}\t{}\t{}", a.trial_id, a.stim_a.id, a.stim_b.id),
            &format!("{}\t{}\t{}", a.trial_id, a.stim_a.id, reused.id),
        )
    };
    fs::write(d.join("plan/key.tsv"), edit(&key_text)).unwrap();
    fs::write(d.join("plan/L001.tsv"), edit(&manifest)).unwrap();
    let out = spkeval(&["verify", "--plan", &p(d, "plan"), "--inventory", inv]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("StimulusReuse"), "{err}");
    assert_eq!(err.matches("violation:").count(), 1, "{err}");

    // listener responses to the clean plan
    let key = parse_key(fs::read(d.join("plan2/key.tsv")).unwrap().as_slice()).unwrap();
    let plan = spkeval::design::read_plan(&d.join("plan2")).unwrap();
    let mut responses = Vec::new();
    for l in &plan.listeners {
        for (i, pt) in l.trials.iter().enumerate() {
            responses.push(PerceptualResponse {
                listener_id: l.listener_id.clone(),
                trial_id: pt.trial.trial_id.clone(),
                order: pt.order,
                decision: if pt.trial.is_target() == (i % 5 != 0) { Decision::Same } else { Decision::Different },
                confidence: (i % 6) as u8,
                timestamp: Some("2024-03-01T10:00:00Z".into()),
            });
        }
    }
    let mut buf = Vec::new();
    write_responses(&responses, &mut buf).unwrap();
    fs::write(d.join("resp.tsv"), buf).unwrap();
    fs::write(d.join("roster.tsv"), "listener_id\tnative\nL001\tyes\nL002\tno\nL003\tyes\n").unwrap();

    ok(&[
        "unfold", "--responses", &p(d, "resp.tsv"), "--key", &p(d, "plan2/key.tsv"), "--out", &p(d, "h.tsv"),
        "--key-out", &p(d, "hkey.tsv"), "--roster", &p(d, "roster.tsv"), "--filter", "native=yes",
    ]);
    let scores = parse_scores(fs::read(d.join("h.tsv")).unwrap().as_slice(), "h").unwrap();
    assert_eq!(scores.scores.len(), 48);
    ok(&["calibrate", "--scores", &p(d, "h.tsv"), "--key", &p(d, "hkey.tsv"), "--out", &p(d, "h.llr")]);

    ok(&["unfold", "--responses", &p(d, "resp.tsv"), "--key", &p(d, "plan2/key.tsv"), "--mode", "per-pair-mean", "--out", &p(d, "hm.tsv")]);
    let pooled = parse_scores(fs::read(d.join("hm.tsv")).unwrap().as_slice(), "h").unwrap();
    assert_eq!(pooled.scores.len(), key.len());

    let out = spkeval(&["unfold", "--responses", &p(d, "resp.tsv"), "--key", &p(d, "plan2/key.tsv"), "--out", "-", "--roster", &p(d, "roster.tsv"), "--filter", "native"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_writes_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[
        "synth", "--key", &p(d, "k.tsv"), "--speakers", "5", "--trials-per-cell", "10", "--dprime-rr", "2",
        "--dprime-cc", "2", "--dprime-rc", "-0.5", "--speaker-sd", "1", "--seed", "11", "--out", &p(d, "s.tsv"),
        "--truth", &p(d, "truth.tsv"),
    ]);
    let truth = fs::read_to_string(d.join("truth.tsv")).unwrap();
    assert_eq!(truth.lines().next(), Some("speaker\tdelta"));
    assert_eq!(truth.lines().count(), 6);
    let out = spkeval(&[
        "synth", "--key", &p(d, "k.tsv"), "--dprime-rr", "2", "--dprime-cc", "2", "--dprime-rc", "1",
        "--speaker-sd", "-1", "--seed", "1", "--out", &p(d, "s2.tsv"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
