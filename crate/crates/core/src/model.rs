//! Shared data model: speakers, stimuli, style conditions and labelled trials.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn check_id(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::InvalidId(s.to_string()));
    }
    Ok(())
}

/// Opaque speaker identifier. Compared by exact byte equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SpeakerId(String);

impl SpeakerId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        check_id(&id)?;
        Ok(SpeakerId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SpeakerId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        SpeakerId::new(s)
    }
}

impl From<SpeakerId> for String {
    fn from(s: SpeakerId) -> String {
        s.0
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Speaking style of a stimulus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Style {
    Read,
    Conversation,
}

impl Style {
    pub fn code(self) -> &'static str {
        match self {
            Style::Read => "read",
            Style::Conversation => "conv",
        }
    }
}

impl FromStr for Style {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "read" => Ok(Style::Read),
            "conv" => Ok(Style::Conversation),
            other => Err(format!("unknown style `{other}` (expected read|conv)")),
        }
    }
}

/// A single audio stimulus in an inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub speaker: SpeakerId,
    pub style: Style,
    pub uri: Option<String>,
    pub duration_s: Option<f64>,
}

impl Stimulus {
    pub fn new(id: impl Into<String>, speaker: SpeakerId, style: Style) -> Result<Self> {
        let id = id.into();
        check_id(&id)?;
        Ok(Stimulus {
            id,
            speaker,
            style,
            uri: None,
            duration_s: None,
        })
    }
}

/// Speaking-style condition of a trial. Read/conversation pairs are unordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    ReadRead,
    ConvConv,
    ReadConv,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::ReadRead, Condition::ConvConv, Condition::ReadConv];

    pub fn of(a: Style, b: Style) -> Condition {
        match (a, b) {
            (Style::Read, Style::Read) => Condition::ReadRead,
            (Style::Conversation, Style::Conversation) => Condition::ConvConv,
            _ => Condition::ReadConv,
        }
    }

    /// Short code used in reports and CLI output.
    pub fn code(self) -> &'static str {
        match self {
            Condition::ReadRead => "RR",
            Condition::ConvConv => "CC",
            Condition::ReadConv => "RC",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Condition::ReadRead => 0,
            Condition::ConvConv => 1,
            Condition::ReadConv => 2,
        }
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "RR" => Ok(Condition::ReadRead),
            "CC" => Ok(Condition::ConvConv),
            "RC" => Ok(Condition::ReadConv),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Target,
    NonTarget,
}

impl Label {
    pub fn code(self) -> &'static str {
        match self {
            Label::Target => "tar",
            Label::NonTarget => "non",
        }
    }

    pub fn is_target(self) -> bool {
        self == Label::Target
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tar" => Ok(Label::Target),
            "non" => Ok(Label::NonTarget),
            other => Err(format!("unknown label `{other}` (expected tar|non)")),
        }
    }
}

/// A labelled pair of stimuli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub stim_a: Stimulus,
    pub stim_b: Stimulus,
    pub condition: Condition,
    pub label: Label,
}

impl Trial {
    /// Builds a trial whose condition and label are derived from the stimuli.
    pub fn derive(trial_id: impl Into<String>, stim_a: Stimulus, stim_b: Stimulus) -> Trial {
        let condition = Condition::of(stim_a.style, stim_b.style);
        let label = if stim_a.speaker == stim_b.speaker {
            Label::Target
        } else {
            Label::NonTarget
        };
        Trial {
            trial_id: trial_id.into(),
            stim_a,
            stim_b,
            condition,
            label,
        }
    }

    pub fn is_target(&self) -> bool {
        self.label.is_target()
    }

    /// Checks the per-trial invariants.
    pub fn check(&self) -> Result<()> {
        check_id(&self.trial_id)?;
        let same = self.stim_a.speaker == self.stim_b.speaker;
        if same != self.label.is_target() {
            return Err(Error::LabelSpeakerMismatch(self.trial_id.clone()));
        }
        if Condition::of(self.stim_a.style, self.stim_b.style) != self.condition {
            return Err(Error::ConditionStyleMismatch(self.trial_id.clone()));
        }
        if self.stim_a.id == self.stim_b.id {
            return Err(Error::SelfPairedStimulus(self.trial_id.clone()));
        }
        Ok(())
    }
}

/// An ordered collection of validated trials with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    trials: Vec<Trial>,
    index: HashMap<String, usize>,
}

/// Validates raw trial records, preserving their order.
pub fn validate_trial_set(raw: Vec<Trial>) -> Result<TrialSet> {
    let mut index = HashMap::with_capacity(raw.len());
    let mut stimuli: HashMap<&str, (&SpeakerId, Style)> = HashMap::new();
    for (i, t) in raw.iter().enumerate() {
        t.check()?;
        if index.insert(t.trial_id.clone(), i).is_some() {
            return Err(Error::DuplicateTrialId(t.trial_id.clone()));
        }
        for s in [&t.stim_a, &t.stim_b] {
            let entry = stimuli.entry(&s.id).or_insert((&s.speaker, s.style));
            if entry.0 != &s.speaker || entry.1 != s.style {
                return Err(Error::InconsistentStimulus(s.id.clone()));
            }
        }
    }
    Ok(TrialSet { trials: raw, index })
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trial> {
        self.trials.iter()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn get(&self, trial_id: &str) -> Option<&Trial> {
        self.index.get(trial_id).map(|&i| &self.trials[i])
    }

    pub fn contains(&self, trial_id: &str) -> bool {
        self.index.contains_key(trial_id)
    }

    pub fn n_tar(&self) -> usize {
        self.trials.iter().filter(|t| t.is_target()).count()
    }

    pub fn n_non(&self) -> usize {
        self.trials.len() - self.n_tar()
    }

    /// All speakers appearing on either side of any trial, sorted.
    pub fn speakers(&self) -> BTreeSet<SpeakerId> {
        self.trials
            .iter()
            .flat_map(|t| [t.stim_a.speaker.clone(), t.stim_b.speaker.clone()])
            .collect()
    }

    /// Fails with `DegenerateKey` unless both classes are present.
    pub fn require_both_classes(&self) -> Result<()> {
        let n_tar = self.n_tar();
        if n_tar == 0 || n_tar == self.trials.len() {
            return Err(Error::DegenerateKey);
        }
        Ok(())
    }

    /// The trials of one style condition, order preserved.
    pub fn subset(&self, condition: Condition) -> TrialSet {
        self.filter(|t| t.condition == condition)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Trial) -> bool) -> TrialSet {
        let trials: Vec<Trial> = self.trials.iter().filter(|t| keep(t)).cloned().collect();
        let index = trials
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trial_id.clone(), i))
            .collect();
        TrialSet { trials, index }
    }
}

impl<'a> IntoIterator for &'a TrialSet {
    type Item = &'a Trial;
    type IntoIter = std::slice::Iter<'a, Trial>;
    fn into_iter(self) -> Self::IntoIter {
        self.trials.iter()
    }
}
