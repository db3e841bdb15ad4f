//! Speaker-level LLR and Cllr aggregation, difficulty partitions and
//! cross-system confusion matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_table, write_header};
use crate::metrics::log2_1p_exp;
use crate::model::{SpeakerId, TrialSet};
use crate::scores::{aligned, Scored};

/// Per-speaker aggregation. Fields that need trials of a missing class are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSummary {
    pub speaker: SpeakerId,
    pub n_tar: usize,
    pub n_non: usize,
    /// Mean LLR over the speaker's target trials.
    pub l_tar: Option<f64>,
    /// Mean LLR over non-target trials involving the speaker.
    pub l_non: Option<f64>,
    pub cllr_tar: Option<f64>,
    pub cllr_non: Option<f64>,
    /// ½(cllr_tar + cllr_non), present only when both sides are.
    pub cllr: Option<f64>,
}

#[derive(Default)]
struct Acc {
    n_tar: usize,
    n_non: usize,
    sum_tar: f64,
    sum_non: f64,
    cost_tar: f64,
    cost_non: f64,
}

/// Summaries of every speaker in the key, sorted by speaker id.
///
/// A non-target trial counts towards both of its speakers.
pub fn speaker_summaries(llrs: &impl Scored, key: &TrialSet) -> Result<Vec<SpeakerSummary>> {
    let mut acc: BTreeMap<&SpeakerId, Acc> = BTreeMap::new();
    for (t, l) in aligned(llrs.values(), key)? {
        if t.is_target() {
            let a = acc.entry(&t.stim_a.speaker).or_default();
            a.n_tar += 1;
            a.sum_tar += l;
            a.cost_tar += log2_1p_exp(-l);
        } else {
            for spk in [&t.stim_a.speaker, &t.stim_b.speaker] {
                let a = acc.entry(spk).or_default();
                a.n_non += 1;
                a.sum_non += l;
                a.cost_non += log2_1p_exp(l);
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|(spk, a)| {
            let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
            let cllr_tar = mean(a.cost_tar, a.n_tar);
            let cllr_non = mean(a.cost_non, a.n_non);
            SpeakerSummary {
                speaker: spk.clone(),
                n_tar: a.n_tar,
                n_non: a.n_non,
                l_tar: mean(a.sum_tar, a.n_tar),
                l_non: mean(a.sum_non, a.n_non),
                cllr_tar,
                cllr_non,
                cllr: cllr_tar.zip(cllr_non).map(|(t, n)| 0.5 * (t + n)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    Easy,
    Average,
    Hard,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Easy, Subset::Average, Subset::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Easy => "easy",
            Subset::Average => "average",
            Subset::Hard => "hard",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "easy" => Ok(Subset::Easy),
            "average" => Ok(Subset::Average),
            "hard" => Ok(Subset::Hard),
            other => Err(format!("unknown subset `{other}`")),
        }
    }
}

/// Easy/average/hard split of a speaker population, each in ranking order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub easy: Vec<SpeakerId>,
    pub average: Vec<SpeakerId>,
    pub hard: Vec<SpeakerId>,
    /// Speakers without a speaker-level cllr (missing targets or non-targets).
    pub excluded: Vec<SpeakerId>,
}

impl Partition {
    pub fn subset(&self, s: Subset) -> &[SpeakerId] {
        match s {
            Subset::Easy => &self.easy,
            Subset::Average => &self.average,
            Subset::Hard => &self.hard,
        }
    }

    pub fn subset_of(&self, speaker: &SpeakerId) -> Option<Subset> {
        Subset::ALL
            .into_iter()
            .find(|&s| self.subset(s).contains(speaker))
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.easy.len(), self.average.len(), self.hard.len()]
    }

    /// All partitioned speakers (excluding `excluded`).
    pub fn population(&self) -> BTreeSet<&SpeakerId> {
        self.easy.iter().chain(&self.average).chain(&self.hard).collect()
    }

    fn lookup(&self) -> BTreeMap<&SpeakerId, Subset> {
        Subset::ALL
            .into_iter()
            .flat_map(|s| self.subset(s).iter().map(move |id| (id, s)))
            .collect()
    }
}

/// Default subset size: a third of the population, rounded down.
pub fn default_subset_size(population: usize) -> usize {
    population / 3
}

/// Ranks speakers by (cllr ascending, id ascending) and cuts off the lowest
/// `n_easy` and highest `n_hard`.
pub fn partition_speakers(
    summaries: &[SpeakerSummary],
    n_easy: usize,
    n_hard: usize,
) -> Result<Partition> {
    let mut ranked: Vec<(f64, &SpeakerId)> = Vec::with_capacity(summaries.len());
    let mut excluded = Vec::new();
    for s in summaries {
        match s.cllr {
            Some(c) => ranked.push((c, &s.speaker)),
            None => excluded.push(s.speaker.clone()),
        }
    }
    if n_easy + n_hard > ranked.len() {
        return Err(Error::SubsetSizesExceedPopulation {
            n_easy,
            n_hard,
            population: ranked.len(),
        });
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let ids: Vec<SpeakerId> = ranked.into_iter().map(|(_, id)| id.clone()).collect();
    let n = ids.len();
    Ok(Partition {
        easy: ids[..n_easy].to_vec(),
        average: ids[n_easy..n - n_hard].to_vec(),
        hard: ids[n - n_hard..].to_vec(),
        excluded,
    })
}

/// Subset overlap counts of two partitions, optionally split by a third.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    /// `counts[i][j]` = speakers in subset i of the first and j of the second partition.
    pub counts: [[usize; 3]; 3],
    /// `triplets[i][j][k]` further splits each cell by subset k of the third partition.
    pub triplets: Option<[[[usize; 3]; 3]; 3]>,
}

impl ConfusionMatrix3 {
    pub fn row_sums(&self) -> [usize; 3] {
        self.counts.map(|r| r.iter().sum())
    }

    pub fn col_sums(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for r in &self.counts {
            for (o, c) in out.iter_mut().zip(r) {
                *o += c;
            }
        }
        out
    }
}

pub fn confusion_matrix(
    p1: &Partition,
    p2: &Partition,
    p3: Option<&Partition>,
) -> Result<ConfusionMatrix3> {
    let pop = p1.population();
    if pop != p2.population() || p3.is_some_and(|p| p.population() != pop) {
        return Err(Error::PopulationMismatch);
    }
    let l2 = p2.lookup();
    let l3 = p3.map(Partition::lookup);
    let mut counts = [[0usize; 3]; 3];
    let mut triplets = [[[0usize; 3]; 3]; 3];
    for s1 in Subset::ALL {
        for id in p1.subset(s1) {
            let j = l2[id].index();
            counts[s1.index()][j] += 1;
            if let Some(l3) = &l3 {
                triplets[s1.index()][j][l3[id].index()] += 1;
            }
        }
    }
    Ok(ConfusionMatrix3 {
        counts,
        triplets: l3.map(|_| triplets),
    })
}

pub const SUMMARY_HEADER: &[&str] = &[
    "speaker", "n_tar", "n_non", "L_tar", "L_non", "cllr_tar", "cllr_non", "cllr", "subset",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

/// Writes summaries in the given order with each speaker's subset.
pub fn write_summaries<W: Write>(
    summaries: &[SpeakerSummary],
    partition: &Partition,
    mut w: W,
) -> Result<()> {
    write_header(&mut w, SUMMARY_HEADER)?;
    let lookup = partition.lookup();
    for s in summaries {
        let subset = lookup
            .get(&s.speaker)
            .map(|s| s.name())
            .unwrap_or("excluded");
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.speaker,
            s.n_tar,
            s.n_non,
            opt(s.l_tar),
            opt(s.l_non),
            opt(s.cllr_tar),
            opt(s.cllr_non),
            opt(s.cllr),
            subset
        )?;
    }
    Ok(())
}

/// Reads the partition back from a summary file. Rows are ranked by cllr
/// then id within each subset.
pub fn parse_partition<R: BufRead>(reader: R) -> Result<Partition> {
    let table = read_table(reader, &[SUMMARY_HEADER])?;
    let mut rows: Vec<(Option<f64>, SpeakerId, Option<Subset>)> = Vec::new();
    for row in &table.rows {
        let id = SpeakerId::new(row.id(0)?)?;
        let cllr = match row.fields[7].as_str() {
            "NA" => None,
            _ => Some(row.parse::<f64>(7)?),
        };
        let subset = match row.fields[8].as_str() {
            "excluded" => None,
            _ => Some(row.parse::<Subset>(8)?),
        };
        rows.push((cllr, id, subset));
    }
    rows.sort_by(|a, b| {
        a.0.unwrap_or(f64::INFINITY)
            .total_cmp(&b.0.unwrap_or(f64::INFINITY))
            .then_with(|| a.1.cmp(&b.1))
    });
    let mut p = Partition::default();
    for (_, id, subset) in rows {
        match subset {
            Some(Subset::Easy) => p.easy.push(id),
            Some(Subset::Average) => p.average.push(id),
            Some(Subset::Hard) => p.hard.push(id),
            None => p.excluded.push(id),
        }
    }
    Ok(p)
}

pub const MATRIX_HEADER: &[&str] = &[
    "p1_subset",
    "p2_subset",
    "count",
    "p3_easy",
    "p3_average",
    "p3_hard",
];

/// Long-format matrix: one row per (p1 subset, p2 subset) cell. The p3
/// columns hold `NA` when no third partition was given.
pub fn write_matrix<W: Write>(m: &ConfusionMatrix3, mut w: W) -> Result<()> {
    write_header(&mut w, MATRIX_HEADER)?;
    for i in Subset::ALL {
        for j in Subset::ALL {
            let (a, b) = (i.index(), j.index());
            let trip = match &m.triplets {
                Some(t) => t[a][b].map(|x| x.to_string()).join("\t"),
                None => "NA\tNA\tNA".into(),
            };
            writeln!(w, "{i}\t{j}\t{}\t{trip}", m.counts[a][b])?;
        }
    }
    Ok(())
}
