//! Listening-experiment plans and synthetic score generation.
//!
//! Randomness comes from ChaCha8 seeded with the user's seed
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`), so plans and synthetic data
//! are reproducible bit for bit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_key, read_table, write_header, write_key};
use crate::model::{validate_trial_set, Condition, Label, SpeakerId, Stimulus, Style, Trial, TrialSet};
use crate::perceptual::Order;
use crate::scores::ScoreSet;

/// Trial types per talker: three conditions times two labels.
pub const TRIAL_TYPES: usize = 6;
/// Read and conversational stimuli a talker must supply for its own six trials.
pub const OWN_READ_DEMAND: usize = 5;
pub const OWN_CONV_DEMAND: usize = 4;

/// Stimuli grouped by talker. Talker order is first appearance in the list.
#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    pub speakers: Vec<SpeakerId>,
    pub stimuli: Vec<Stimulus>,
}

impl Inventory {
    pub fn new(stimuli: Vec<Stimulus>) -> Result<Inventory> {
        let mut seen = HashSet::new();
        let mut speakers = Vec::new();
        for s in &stimuli {
            if !seen.insert(s.id.clone()) {
                return Err(Error::InvalidParams(format!("duplicate stimulus `{}`", s.id)));
            }
            if !speakers.contains(&s.speaker) {
                speakers.push(s.speaker.clone());
            }
        }
        Ok(Inventory { speakers, stimuli })
    }

    fn by_talker(&self, style: Style) -> Vec<Vec<usize>> {
        let pos: HashMap<&SpeakerId, usize> =
            self.speakers.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut out = vec![Vec::new(); self.speakers.len()];
        for (i, s) in self.stimuli.iter().enumerate() {
            if s.style == style {
                out[pos[&s.speaker]].push(i);
            }
        }
        out
    }

    pub fn stimulus(&self, id: &str) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub trial: Trial,
    pub order: Order,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerPlan {
    pub listener_id: String,
    pub talkers: Vec<SpeakerId>,
    pub trials: Vec<PlannedTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub subset_size: usize,
    /// Free text for curators.
    pub note: String,
    pub listeners: Vec<ListenerPlan>,
}

impl ExperimentPlan {
    /// All listeners' trials as one key, in plan order.
    pub fn combined_key(&self) -> Result<TrialSet> {
        validate_trial_set(
            self.listeners
                .iter()
                .flat_map(|l| l.trials.iter().map(|p| p.trial.clone()))
                .collect(),
        )
    }

    pub fn listener(&self, id: &str) -> Option<&ListenerPlan> {
        self.listeners.iter().find(|l| l.listener_id == id)
    }
}

pub fn listener_id(index: usize) -> String {
    format!("L{:03}", index + 1)
}

/// Draws one plan per listener.
///
/// Each listener gets `subset_size` random talkers. For every talker, one
/// trial of each (condition × label) type is built with the talker supplying
/// `stim_a`; the target partner is another stimulus of the same talker and
/// the non-target partner a random other talker of the subset. In
/// read–conversation non-targets the talker supplies the read stimulus. No
/// stimulus is used twice per listener.
pub fn design_experiment(
    inventory: &Inventory,
    n_listeners: usize,
    subset_size: usize,
    seed: u64,
) -> Result<ExperimentPlan> {
    if n_listeners == 0 {
        return Err(Error::InvalidParams("at least one listener is required".into()));
    }
    if subset_size < 2 {
        return Err(Error::InvalidParams("subset size must be at least 2".into()));
    }
    if subset_size > inventory.speakers.len() {
        return Err(Error::InfeasibleInventory(format!(
            "subset size {subset_size} exceeds the {} talkers in the inventory",
            inventory.speakers.len()
        )));
    }
    let reads = inventory.by_talker(Style::Read);
    let convs = inventory.by_talker(Style::Conversation);
    for (i, spk) in inventory.speakers.iter().enumerate() {
        if reads[i].len() < OWN_READ_DEMAND {
            return Err(Error::InfeasibleInventory(format!(
                "talker `{spk}` has {} read stimuli, {OWN_READ_DEMAND} are needed",
                reads[i].len()
            )));
        }
        if convs[i].len() < OWN_CONV_DEMAND {
            return Err(Error::InfeasibleInventory(format!(
                "talker `{spk}` has {} conversational stimuli, {OWN_CONV_DEMAND} are needed",
                convs[i].len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut listeners = Vec::with_capacity(n_listeners);
    for l in 0..n_listeners {
        let lid = listener_id(l);
        let subset: Vec<usize> =
            rand::seq::index::sample(&mut rng, inventory.speakers.len(), subset_size).into_vec();

        // per-talker shuffled pools, popped from the back
        let mut read_pool: Vec<Vec<usize>> = Vec::with_capacity(subset_size);
        let mut conv_pool: Vec<Vec<usize>> = Vec::with_capacity(subset_size);
        for &t in &subset {
            let mut r = reads[t].clone();
            let mut c = convs[t].clone();
            r.shuffle(&mut rng);
            c.shuffle(&mut rng);
            read_pool.push(r);
            conv_pool.push(c);
        }

        // (stim_a, stim_b) index pairs into the inventory
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(TRIAL_TYPES * subset_size);
        let mut pending_partner: Vec<(usize, usize, Style)> = Vec::new();
        for k in 0..subset_size {
            let r = &mut read_pool[k];
            let c = &mut conv_pool[k];
            let (r1, r2, r3, r4, r5) = (
                r.pop().unwrap(),
                r.pop().unwrap(),
                r.pop().unwrap(),
                r.pop().unwrap(),
                r.pop().unwrap(),
            );
            let (c1, c2, c3, c4) = (c.pop().unwrap(), c.pop().unwrap(), c.pop().unwrap(), c.pop().unwrap());
            pairs.push((r1, r2)); // RR target
            pairs.push((c1, c2)); // CC target
            pairs.push((r4, c4)); // RC target
            pending_partner.push((k, r3, Style::Read)); // RR non-target
            pending_partner.push((k, c3, Style::Conversation)); // CC non-target
            pending_partner.push((k, r5, Style::Conversation)); // RC non-target
        }
        let partners = draw_partners(&pending_partner, &read_pool, &conv_pool, &mut rng).ok_or_else(|| {
            Error::InfeasibleInventory(format!(
                "listener {lid}: leftover stimuli cannot cover the non-target partners \
                 after {PARTNER_ATTEMPTS} attempts"
            ))
        })?;
        pairs.extend(partners);

        let mut planned: Vec<(usize, usize, Order)> = pairs
            .into_iter()
            .map(|(a, b)| {
                let order = if rng.random::<bool>() { Order::AB } else { Order::BA };
                (a, b, order)
            })
            .collect();
        planned.shuffle(&mut rng);
        let trials = planned
            .into_iter()
            .enumerate()
            .map(|(i, (a, b, order))| PlannedTrial {
                trial: Trial::derive(
                    format!("{lid}-t{:03}", i + 1),
                    inventory.stimuli[a].clone(),
                    inventory.stimuli[b].clone(),
                ),
                order,
            })
            .collect();
        listeners.push(ListenerPlan {
            listener_id: lid,
            talkers: subset.iter().map(|&t| inventory.speakers[t].clone()).collect(),
            trials,
        });
    }
    Ok(ExperimentPlan {
        seed,
        subset_size,
        note: String::new(),
        listeners,
    })
}

/// Random partner draws per listener before the inventory is declared infeasible.
pub const PARTNER_ATTEMPTS: usize = 1000;

/// Completes non-target pairs with stimuli from uniformly drawn partner
/// talkers. A draw that paints itself into a corner is restarted.
fn draw_partners(
    pending: &[(usize, usize, Style)],
    read_pool: &[Vec<usize>],
    conv_pool: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Option<Vec<(usize, usize)>> {
    'attempt: for _ in 0..PARTNER_ATTEMPTS {
        let mut reads = read_pool.to_vec();
        let mut convs = conv_pool.to_vec();
        let mut out = Vec::with_capacity(pending.len());
        for &(k, a, style) in pending {
            let pool = match style {
                Style::Read => &mut reads,
                Style::Conversation => &mut convs,
            };
            let eligible: Vec<usize> = (0..pool.len()).filter(|&p| p != k && !pool[p].is_empty()).collect();
            let Some(&p) = eligible.choose(rng) else {
                continue 'attempt;
            };
            out.push((a, pool[p].pop().unwrap()));
        }
        return Some(out);
    }
    None
}

/// A broken plan constraint, with listener/trial coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    WrongTalkerCount { listener: String, expected: usize, found: usize },
    UnknownTalker { listener: String, talker: String },
    WrongTrialCount { listener: String, expected: usize, found: usize },
    CellImbalance { listener: String, condition: Condition, n_tar: usize, n_non: usize },
    StimulusReuse { listener: String, stimulus: String, trial_id: String },
    PairOrderRepeat { listener: String, trial_id: String },
    UnknownStimulus { listener: String, trial_id: String, stimulus: String },
    StimulusMismatch { listener: String, trial_id: String, stimulus: String },
    TalkerOutsideSubset { listener: String, trial_id: String, talker: String },
    InvalidTrial { listener: String, trial_id: String, reason: String },
    DuplicateTrialId { listener: String, trial_id: String },
    DuplicateListener { listener: String },
}

/// Checks every plan invariant and inventory membership.
pub fn verify_plan(plan: &ExperimentPlan, inventory: &Inventory) -> Vec<Violation> {
    let mut out = Vec::new();
    let stimuli: HashMap<&str, &Stimulus> =
        inventory.stimuli.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut trial_ids = HashSet::new();
    let mut listener_ids = HashSet::new();
    for l in &plan.listeners {
        let lid = || l.listener_id.clone();
        if !listener_ids.insert(&l.listener_id) {
            out.push(Violation::DuplicateListener { listener: lid() });
        }
        let talkers: HashSet<&SpeakerId> = l.talkers.iter().collect();
        if l.talkers.len() != plan.subset_size || talkers.len() != l.talkers.len() {
            out.push(Violation::WrongTalkerCount {
                listener: lid(),
                expected: plan.subset_size,
                found: talkers.len(),
            });
        }
        for t in &l.talkers {
            if !inventory.speakers.contains(t) {
                out.push(Violation::UnknownTalker { listener: lid(), talker: t.to_string() });
            }
        }
        let expected = TRIAL_TYPES * plan.subset_size;
        if l.trials.len() != expected {
            out.push(Violation::WrongTrialCount { listener: lid(), expected, found: l.trials.len() });
        }
        let mut cells = [[0usize; 2]; 3];
        let mut used = HashSet::new();
        let mut pairs = HashSet::new();
        for p in &l.trials {
            let t = &p.trial;
            let tid = || t.trial_id.clone();
            if !trial_ids.insert(&t.trial_id) {
                out.push(Violation::DuplicateTrialId { listener: lid(), trial_id: tid() });
            }
            if let Err(e) = t.check() {
                out.push(Violation::InvalidTrial { listener: lid(), trial_id: tid(), reason: e.to_string() });
            }
            cells[t.condition.index()][usize::from(t.label == Label::NonTarget)] += 1;
            for s in [&t.stim_a, &t.stim_b] {
                match stimuli.get(s.id.as_str()) {
                    None => out.push(Violation::UnknownStimulus {
                        listener: lid(),
                        trial_id: tid(),
                        stimulus: s.id.clone(),
                    }),
                    Some(inv) if inv.speaker != s.speaker || inv.style != s.style => {
                        out.push(Violation::StimulusMismatch {
                            listener: lid(),
                            trial_id: tid(),
                            stimulus: s.id.clone(),
                        })
                    }
                    Some(_) => {}
                }
                if !talkers.contains(&s.speaker) {
                    out.push(Violation::TalkerOutsideSubset {
                        listener: lid(),
                        trial_id: tid(),
                        talker: s.speaker.to_string(),
                    });
                }
                if !used.insert(s.id.as_str()) {
                    out.push(Violation::StimulusReuse {
                        listener: lid(),
                        stimulus: s.id.clone(),
                        trial_id: tid(),
                    });
                }
            }
            let pair = if t.stim_a.id <= t.stim_b.id {
                (t.stim_a.id.as_str(), t.stim_b.id.as_str(), p.order)
            } else {
                (t.stim_b.id.as_str(), t.stim_a.id.as_str(), p.order)
            };
            if !pairs.insert(pair) {
                out.push(Violation::PairOrderRepeat { listener: lid(), trial_id: tid() });
            }
        }
        for c in Condition::ALL {
            let [n_tar, n_non] = cells[c.index()];
            if n_tar != n_non {
                out.push(Violation::CellImbalance { listener: lid(), condition: c, n_tar, n_non });
            }
        }
    }
    out
}

/// How often each talker served as the non-target partner (stim_b), per listener.
pub fn partner_appearances(plan: &ExperimentPlan) -> BTreeMap<String, BTreeMap<SpeakerId, usize>> {
    plan.listeners
        .iter()
        .map(|l| {
            let mut counts: BTreeMap<SpeakerId, usize> =
                l.talkers.iter().map(|t| (t.clone(), 0)).collect();
            for p in l.trials.iter().filter(|p| !p.trial.is_target()) {
                *counts.entry(p.trial.stim_b.speaker.clone()).or_default() += 1;
            }
            (l.listener_id.clone(), counts)
        })
        .collect()
}

pub const MANIFEST_HEADER: &[&str] = &["trial_index", "trial_id", "stim_a", "stim_b", "order"];

#[derive(Serialize, Deserialize)]
struct PlanMeta {
    seed: u64,
    subset_size: usize,
    note: String,
    listeners: Vec<ListenerMeta>,
}

#[derive(Serialize, Deserialize)]
struct ListenerMeta {
    listener_id: String,
    talkers: Vec<SpeakerId>,
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes `plan.json`, one `<listener>.tsv` manifest per listener and the
/// combined `key.tsv`.
pub fn write_plan(plan: &ExperimentPlan, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = PlanMeta {
        seed: plan.seed,
        subset_size: plan.subset_size,
        note: plan.note.clone(),
        listeners: plan
            .listeners
            .iter()
            .map(|l| ListenerMeta {
                listener_id: l.listener_id.clone(),
                talkers: l.talkers.clone(),
            })
            .collect(),
    };
    write_file(&dir.join("plan.json"), |buf| {
        serde_json::to_writer_pretty(&mut *buf, &meta).map_err(|e| Error::Io(e.to_string()))?;
        buf.push(b'\n');
        Ok(())
    })?;
    for l in &plan.listeners {
        write_file(&dir.join(format!("{}.tsv", l.listener_id)), |buf| {
            write_header(buf, MANIFEST_HEADER)?;
            for (i, p) in l.trials.iter().enumerate() {
                writeln!(
                    buf,
                    "{}\t{}\t{}\t{}\t{}",
                    i + 1,
                    p.trial.trial_id,
                    p.trial.stim_a.id,
                    p.trial.stim_b.id,
                    p.order
                )?;
            }
            Ok(())
        })?;
    }
    let key = plan.combined_key()?;
    write_file(&dir.join("key.tsv"), |buf| write_key(&key, buf))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_plan(dir: &Path) -> Result<ExperimentPlan> {
    let meta: PlanMeta = serde_json::from_reader(open(&dir.join("plan.json"))?)
        .map_err(|e| Error::Syntax { line: e.line(), message: format!("plan.json: {e}") })?;
    let key = parse_key(open(&dir.join("key.tsv"))?)?;
    let mut listeners = Vec::with_capacity(meta.listeners.len());
    for lm in meta.listeners {
        let table = read_table(open(&dir.join(format!("{}.tsv", lm.listener_id)))?, &[MANIFEST_HEADER])?;
        let mut trials = Vec::with_capacity(table.rows.len());
        for (i, row) in table.rows.iter().enumerate() {
            let index: usize = row.parse(0)?;
            if index != i + 1 {
                return Err(row.syntax(format!("trial_index {index}, expected {}", i + 1)));
            }
            let tid = row.id(1)?;
            let trial = key
                .get(&tid)
                .ok_or_else(|| row.syntax(format!("trial `{tid}` missing from key.tsv")))?;
            if trial.stim_a.id != row.fields[2] || trial.stim_b.id != row.fields[3] {
                return Err(row.syntax(format!("trial `{tid}` disagrees with key.tsv")));
            }
            trials.push(PlannedTrial {
                trial: trial.clone(),
                order: row.parse(4)?,
            });
        }
        listeners.push(ListenerPlan {
            listener_id: lm.listener_id,
            talkers: lm.talkers,
            trials,
        });
    }
    Ok(ExperimentPlan {
        seed: meta.seed,
        subset_size: meta.subset_size,
        note: meta.note,
        listeners,
    })
}

/// Parameters of the synthetic score generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    /// Trials per (condition, label) cell when generating a key.
    pub trials_per_cell: usize,
    /// Target-score mean shift per condition, indexed RR, CC, RC.
    pub dprime: [f64; 3],
    pub speaker_effect_sd: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn uniform(dprime: f64, n_speakers: usize, trials_per_cell: usize, seed: u64) -> Self {
        SynthConfig {
            n_speakers,
            trials_per_cell,
            dprime: [dprime; 3],
            speaker_effect_sd: 0.0,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if self.dprime.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParams("d' values must be finite".into()));
        }
        if !(self.speaker_effect_sd >= 0.0 && self.speaker_effect_sd.is_finite()) {
            return Err(Error::InvalidParams("speaker effect sd must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn synth_speaker(i: usize) -> SpeakerId {
    SpeakerId::new(format!("spk{:03}", i + 1)).expect("valid id")
}

/// Generates a key with `trials_per_cell` trials in each (condition, label)
/// cell. Talkers rotate through stim_a; non-target partners are uniform.
pub fn synth_key(config: &SynthConfig) -> Result<TrialSet> {
    config.check()?;
    if config.trials_per_cell == 0 {
        return Err(Error::InvalidParams("trials per cell must be at least 1".into()));
    }
    if config.n_speakers < 2 {
        return Err(Error::InvalidParams("at least two speakers are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6b65_795f_7365_6564);
    let speakers: Vec<SpeakerId> = (0..config.n_speakers).map(synth_speaker).collect();
    let mut trials = Vec::with_capacity(6 * config.trials_per_cell);
    for c in Condition::ALL {
        let (sa, sb) = match c {
            Condition::ReadRead => (Style::Read, Style::Read),
            Condition::ConvConv => (Style::Conversation, Style::Conversation),
            Condition::ReadConv => (Style::Read, Style::Conversation),
        };
        for label in [Label::Target, Label::NonTarget] {
            for i in 0..config.trials_per_cell {
                let a = i % config.n_speakers;
                let b = match label {
                    Label::Target => a,
                    Label::NonTarget => {
                        let r = rng.random_range(0..config.n_speakers - 1);
                        if r >= a { r + 1 } else { r }
                    }
                };
                let tid = format!("syn{:07}", trials.len() + 1);
                let stim_a = Stimulus::new(format!("{tid}a"), speakers[a].clone(), sa)?;
                let stim_b = Stimulus::new(format!("{tid}b"), speakers[b].clone(), sb)?;
                trials.push(Trial::derive(tid, stim_a, stim_b));
            }
        }
    }
    validate_trial_set(trials)
}

/// Planted per-speaker effects behind synthetic target scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub deltas: BTreeMap<SpeakerId, f64>,
}

impl GroundTruth {
    /// Speakers sorted by planted effect, lowest (hardest) first; ties by id.
    pub fn ranked(&self) -> Vec<SpeakerId> {
        let mut v: Vec<(&SpeakerId, f64)> = self.deltas.iter().map(|(k, &v)| (k, v)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter().map(|(k, _)| k.clone()).collect()
    }
}

/// Draws scores for every trial of `key`: non-targets ~ N(0, 1), targets of
/// speaker s under condition c ~ N(d'_c + δ_s, 1) with δ_s ~ N(0, sd²).
pub fn synth_scores(key: &TrialSet, config: &SynthConfig, system_id: &str) -> Result<(ScoreSet, GroundTruth)> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let effect = Normal::new(0.0, config.speaker_effect_sd)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let deltas: BTreeMap<SpeakerId, f64> = key
        .speakers()
        .into_iter()
        .map(|s| {
            let d = effect.sample(&mut rng);
            (s, d)
        })
        .collect();
    let mut scores = ScoreSet::new(system_id);
    for t in key {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = if t.is_target() {
            z + config.dprime[t.condition.index()] + deltas[&t.stim_a.speaker]
        } else {
            z
        };
        scores.scores.insert(t.trial_id.clone(), v);
    }
    Ok((scores, GroundTruth { deltas }))
}
