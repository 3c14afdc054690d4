use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusIndex, Target, UtteranceKey};

const PLAN_MAGIC: &str = "#authnet-split-plan v1";
const PLAN_COLUMNS: &str = "role\tlabel\tspeaker\tword\tutterance\treplica\timposter_kind";

/// Relationship between a sample and the enrolled person-word combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImposterKind {
    Genuine,
    SamePersonDifferentWord,
    DifferentPersonSameWord,
    DifferentPersonDifferentWord,
}

impl ImposterKind {
    pub const ALL: [ImposterKind; 4] = [
        ImposterKind::Genuine,
        ImposterKind::SamePersonDifferentWord,
        ImposterKind::DifferentPersonSameWord,
        ImposterKind::DifferentPersonDifferentWord,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ImposterKind::Genuine => "genuine",
            ImposterKind::SamePersonDifferentWord => "same_person_different_word",
            ImposterKind::DifferentPersonSameWord => "different_person_same_word",
            ImposterKind::DifferentPersonDifferentWord => "different_person_different_word",
        }
    }

    /// Row label used in printed tables.
    pub fn title(&self) -> &'static str {
        match self {
            ImposterKind::Genuine => "Genuine",
            ImposterKind::SamePersonDifferentWord => "Same Person-Different Words",
            ImposterKind::DifferentPersonSameWord => "Different Person-Same Words",
            ImposterKind::DifferentPersonDifferentWord => "Different Person-Different Words",
        }
    }

    pub fn is_genuine(&self) -> bool {
        matches!(self, ImposterKind::Genuine)
    }
}

impl fmt::Display for ImposterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ImposterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ImposterKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| format!("unknown imposter kind {s:?}"))
    }
}

pub fn classify_imposter(sample: &UtteranceKey, target: &Target) -> ImposterKind {
    match (sample.speaker == target.speaker, sample.word == target.word) {
        (true, true) => ImposterKind::Genuine,
        (true, false) => ImposterKind::SamePersonDifferentWord,
        (false, true) => ImposterKind::DifferentPersonSameWord,
        (false, false) => ImposterKind::DifferentPersonDifferentWord,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRole {
    TrainPositive,
    TrainNegative,
    TestPositive,
    TestNegative,
}

impl SampleRole {
    fn id(&self) -> &'static str {
        match self {
            SampleRole::TrainPositive => "train_positive",
            SampleRole::TrainNegative => "train_negative",
            SampleRole::TestPositive => "test_positive",
            SampleRole::TestNegative => "test_negative",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            SampleRole::TrainPositive,
            SampleRole::TrainNegative,
            SampleRole::TestPositive,
            SampleRole::TestNegative,
        ]
        .into_iter()
        .find(|r| r.id() == s)
    }

    fn is_train(&self) -> bool {
        matches!(self, SampleRole::TrainPositive | SampleRole::TrainNegative)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Speakers set aside entirely (test-only, different-person cases).
    pub held_out_speakers: usize,
    /// Words set aside for the remaining speakers (test-only, same-person cases).
    pub held_out_words: usize,
    /// Replicas generated per genuine utterance. 0 and 1 both leave the
    /// positive pool unchanged.
    pub oversample_factor: usize,
    /// Fraction of the (oversampled) pool assigned to training.
    pub train_ratio: f64,
    /// Minimum genuine utterances the target must have.
    pub min_positives: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            held_out_speakers: 5,
            held_out_words: 3,
            oversample_factor: 10,
            train_ratio: 0.7,
            min_positives: 2,
        }
    }
}

impl SplitConfig {
    pub fn replicas_per_positive(&self) -> u32 {
        if self.oversample_factor <= 1 {
            0
        } else {
            self.oversample_factor as u32
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.train_ratio) || self.train_ratio.is_nan() {
            return Err(CorpusError::InvalidConfig(format!(
                "train_ratio must lie in [0, 1], got {}",
                self.train_ratio
            )));
        }
        Ok(())
    }

    fn check_against(&self, index: &CorpusIndex) -> Result<(), CorpusError> {
        self.validate()?;
        if self.held_out_speakers >= index.speakers.len() {
            return Err(CorpusError::InvalidConfig(format!(
                "cannot hold out {} of {} speakers",
                self.held_out_speakers,
                index.speakers.len()
            )));
        }
        if self.held_out_words >= index.words.len() {
            return Err(CorpusError::InvalidConfig(format!(
                "cannot hold out {} of {} words",
                self.held_out_words,
                index.words.len()
            )));
        }
        Ok(())
    }
}

/// Seeded choice of the set-aside speakers and words. Identical for every
/// target of a run sharing the seed.
fn held_out(index: &CorpusIndex, config: &SplitConfig, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut speakers = index.speakers.clone();
    speakers.shuffle(&mut rng);
    let mut words = index.words.clone();
    words.shuffle(&mut rng);
    let mut hs: Vec<String> = speakers.into_iter().take(config.held_out_speakers).collect();
    let mut hw: Vec<String> = words.into_iter().take(config.held_out_words).collect();
    hs.sort();
    hw.sort();
    (hs, hw)
}

/// Every person-word combination that can be enrolled under `config`: the
/// cross product of the speakers and words left after the seeded hold-out.
pub fn enumerate_targets(index: &CorpusIndex, config: &SplitConfig, seed: u64) -> Vec<Target> {
    let (hs, hw) = held_out(index, config, seed);
    let mut targets = Vec::new();
    for s in index.speakers.iter().filter(|s| !hs.contains(s)) {
        for w in index.words.iter().filter(|w| !hw.contains(w)) {
            targets.push(Target::new(s.clone(), w.clone()));
        }
    }
    targets
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub key: UtteranceKey,
    /// 1 iff `imposter` is genuine.
    pub label: u8,
    /// 0 for the original utterance, 1.. for oversampled copies.
    pub replica: u32,
    pub imposter: ImposterKind,
}

impl PlanEntry {
    fn new(key: UtteranceKey, replica: u32, target: &Target) -> Self {
        let imposter = classify_imposter(&key, target);
        Self {
            key,
            label: imposter.is_genuine() as u8,
            replica,
            imposter,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub genuine: usize,
    pub same_person_different_word: usize,
    pub different_person_same_word: usize,
    pub different_person_different_word: usize,
}

impl CategoryCounts {
    fn add(&mut self, kind: ImposterKind) {
        match kind {
            ImposterKind::Genuine => self.genuine += 1,
            ImposterKind::SamePersonDifferentWord => self.same_person_different_word += 1,
            ImposterKind::DifferentPersonSameWord => self.different_person_same_word += 1,
            ImposterKind::DifferentPersonDifferentWord => self.different_person_different_word += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.genuine
            + self.same_person_different_word
            + self.different_person_same_word
            + self.different_person_different_word
    }
}

/// Sizes of the intermediate partitions of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub held_out_speaker_utterances: usize,
    pub held_out_word_utterances: usize,
    pub pool: usize,
    pub pool_positives: usize,
    pub replicas: usize,
    pub oversampled_pool: usize,
    pub train: usize,
    pub test_from_pool: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub target: Target,
    pub seed: u64,
    pub config: SplitConfig,
    pub held_out_speakers: Vec<String>,
    pub held_out_words: Vec<String>,
    pub train: Vec<PlanEntry>,
    pub test: Vec<PlanEntry>,
}

/// Builds the train/test plan for `target`.
///
/// Speakers and words are set aside by a seeded draw. The remaining pool is
/// split per label at `train_ratio` on base utterances; every genuine base
/// utterance then gains its replicas on the same side of the split. All
/// set-aside utterances are appended to test.
pub fn make_split(
    index: &CorpusIndex,
    target: &Target,
    config: &SplitConfig,
    seed: u64,
) -> Result<SplitPlan, CorpusError> {
    config.check_against(index)?;
    if !index.speakers.contains(&target.speaker) || !index.words.contains(&target.word) {
        return Err(CorpusError::UnknownTarget(target.clone()));
    }
    let (hs, hw) = held_out(index, config, seed);
    if hs.contains(&target.speaker) || hw.contains(&target.word) {
        return Err(CorpusError::TargetHeldOut(target.clone()));
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut set_aside = Vec::new();
    for key in index.keys() {
        if hs.contains(&key.speaker) || hw.contains(&key.word) {
            set_aside.push(key.clone());
        } else if key.speaker == target.speaker && key.word == target.word {
            positives.push(key.clone());
        } else {
            negatives.push(key.clone());
        }
    }
    if positives.len() < config.min_positives.max(1) {
        return Err(CorpusError::InsufficientPositives {
            target: target.clone(),
            found: positives.len(),
            required: config.min_positives.max(1),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let n_pos = train_count(positives.len(), config.train_ratio);
    let n_neg = train_count(negatives.len(), config.train_ratio);
    let replicas = config.replicas_per_positive();

    let with_replicas = |keys: &[UtteranceKey]| -> Vec<PlanEntry> {
        keys.iter()
            .flat_map(|k| (0..=replicas).map(move |r| PlanEntry::new(k.clone(), r, target)))
            .collect()
    };
    let single = |keys: &[UtteranceKey]| -> Vec<PlanEntry> {
        keys.iter()
            .map(|k| PlanEntry::new(k.clone(), 0, target))
            .collect()
    };

    let mut train = with_replicas(&positives[..n_pos]);
    train.extend(single(&negatives[..n_neg]));
    let mut test = with_replicas(&positives[n_pos..]);
    test.extend(single(&negatives[n_neg..]));
    test.extend(single(&set_aside));

    let order = |a: &PlanEntry, b: &PlanEntry| (&a.key, a.replica).cmp(&(&b.key, b.replica));
    train.sort_by(order);
    test.sort_by(order);

    Ok(SplitPlan {
        target: target.clone(),
        seed,
        config: config.clone(),
        held_out_speakers: hs,
        held_out_words: hw,
        train,
        test,
    })
}

fn train_count(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio).round().min(n as f64) as usize
}

impl SplitPlan {
    pub fn role(&self, entry: &PlanEntry, in_train: bool) -> SampleRole {
        match (in_train, entry.label == 1) {
            (true, true) => SampleRole::TrainPositive,
            (true, false) => SampleRole::TrainNegative,
            (false, true) => SampleRole::TestPositive,
            (false, false) => SampleRole::TestNegative,
        }
    }

    /// Imposter-kind counts over every sample of the plan, replicas included.
    pub fn category_counts(&self) -> CategoryCounts {
        let mut counts = CategoryCounts::default();
        for e in self.train.iter().chain(&self.test) {
            counts.add(e.imposter);
        }
        counts
    }

    pub fn partition_sizes(&self) -> PartitionSizes {
        let mut sizes = PartitionSizes {
            held_out_speaker_utterances: 0,
            held_out_word_utterances: 0,
            pool: 0,
            pool_positives: 0,
            replicas: 0,
            oversampled_pool: 0,
            train: self.train.len(),
            test_from_pool: 0,
            test: self.test.len(),
        };
        for e in self.train.iter().chain(&self.test) {
            if self.held_out_speakers.contains(&e.key.speaker) {
                sizes.held_out_speaker_utterances += 1;
            } else if self.held_out_words.contains(&e.key.word) {
                sizes.held_out_word_utterances += 1;
            } else if e.replica > 0 {
                sizes.replicas += 1;
            } else {
                sizes.pool += 1;
                sizes.pool_positives += e.label as usize;
            }
        }
        sizes.oversampled_pool = sizes.pool + sizes.replicas;
        sizes.test_from_pool = sizes.oversampled_pool - sizes.train;
        sizes
    }

    /// Base keys present in both train and test (replicas count as their base).
    pub fn leaked_keys(&self) -> Vec<UtteranceKey> {
        let train: BTreeSet<&UtteranceKey> = self.train.iter().map(|e| &e.key).collect();
        let test: BTreeSet<&UtteranceKey> = self.test.iter().map(|e| &e.key).collect();
        train.intersection(&test).map(|k| (*k).clone()).collect()
    }

    pub fn is_leakage_free(&self) -> bool {
        self.leaked_keys().is_empty()
    }

    /// Checks the structural invariants of a plan.
    pub fn validate(&self) -> Result<(), String> {
        let bases: BTreeSet<&UtteranceKey> = self
            .train
            .iter()
            .chain(&self.test)
            .filter(|e| e.replica == 0)
            .map(|e| &e.key)
            .collect();
        for e in self.train.iter().chain(&self.test) {
            if e.replica > 0 && !bases.contains(&e.key) {
                return Err(format!("replica {} of {} has no base entry", e.replica, e.key));
            }
            if e.imposter != classify_imposter(&e.key, &self.target) {
                return Err(format!("{} has inconsistent imposter kind", e.key));
            }
            if (e.label == 1) != e.imposter.is_genuine() {
                return Err(format!("{} has inconsistent label", e.key));
            }
        }
        for e in &self.train {
            if self.held_out_speakers.contains(&e.key.speaker)
                || self.held_out_words.contains(&e.key.word)
            {
                return Err(format!("held-out utterance {} in train", e.key));
            }
        }
        if let Some(k) = self.leaked_keys().first() {
            return Err(format!("{k} appears in both train and test"));
        }
        Ok(())
    }

    /// Flat tab-separated record format, one sample per line after a `#`
    /// header carrying the seed and configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        let _ = writeln!(out, "{PLAN_MAGIC}");
        let _ = writeln!(out, "#seed\t{}", self.seed);
        let _ = writeln!(out, "#target\t{}\t{}", self.target.speaker, self.target.word);
        let _ = writeln!(out, "#held_out_speakers\t{}", self.held_out_speakers.join("\t"));
        let _ = writeln!(out, "#held_out_words\t{}", self.held_out_words.join("\t"));
        let _ = writeln!(out, "#config.held_out_speakers\t{}", c.held_out_speakers);
        let _ = writeln!(out, "#config.held_out_words\t{}", c.held_out_words);
        let _ = writeln!(out, "#config.oversample_factor\t{}", c.oversample_factor);
        let _ = writeln!(out, "#config.train_ratio\t{}", c.train_ratio);
        let _ = writeln!(out, "#config.min_positives\t{}", c.min_positives);
        let _ = writeln!(out, "{PLAN_COLUMNS}");
        for (in_train, entries) in [(true, &self.train), (false, &self.test)] {
            for e in entries {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    self.role(e, in_train).id(),
                    e.label,
                    e.key.speaker,
                    e.key.word,
                    e.key.utterance,
                    e.replica,
                    e.imposter
                );
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let bad = |line: usize, reason: String| CorpusError::MalformedPlan { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == PLAN_MAGIC => {}
            _ => return Err(bad(1, "missing split-plan header".into())),
        }

        let mut header: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut seen_columns = false;
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split('\t');
                let key = parts.next().unwrap_or_default().to_string();
                let values = parts.filter(|p| !p.is_empty()).map(str::to_string).collect();
                header.insert(key, values);
                continue;
            }
            if !seen_columns {
                if line != PLAN_COLUMNS {
                    return Err(bad(n, "missing column header".into()));
                }
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(n, format!("expected 7 fields, found {}", f.len())));
            }
            let role = SampleRole::parse(f[0]).ok_or_else(|| bad(n, format!("bad role {:?}", f[0])))?;
            let num = |s: &str| s.parse::<u32>().map_err(|e| bad(n, format!("{s:?}: {e}")));
            let entry = PlanEntry {
                label: num(f[1])? as u8,
                key: UtteranceKey::new(f[2], f[3], num(f[4])?),
                replica: num(f[5])?,
                imposter: f[6].parse().map_err(|e| bad(n, e))?,
            };
            if role.is_train() {
                train.push(entry);
            } else {
                test.push(entry);
            }
        }

        let field = |name: &str| -> Result<&Vec<String>, CorpusError> {
            header
                .get(name)
                .ok_or_else(|| bad(0, format!("header field {name} missing")))
        };
        let scalar = |name: &str| -> Result<String, CorpusError> {
            field(name)?
                .first()
                .cloned()
                .ok_or_else(|| bad(0, format!("header field {name} empty")))
        };
        fn parse<T: FromStr>(name: &str, v: String) -> Result<T, CorpusError> {
            v.parse().map_err(|_| CorpusError::MalformedPlan {
                line: 0,
                reason: format!("header field {name} has invalid value {v:?}"),
            })
        }
        let target = field("target")?;
        if target.len() != 2 {
            return Err(bad(0, "target header needs speaker and word".into()));
        }
        let plan = SplitPlan {
            target: Target::new(target[0].clone(), target[1].clone()),
            seed: parse("seed", scalar("seed")?)?,
            config: SplitConfig {
                held_out_speakers: parse("held_out_speakers", scalar("config.held_out_speakers")?)?,
                held_out_words: parse("held_out_words", scalar("config.held_out_words")?)?,
                oversample_factor: parse("oversample_factor", scalar("config.oversample_factor")?)?,
                train_ratio: parse("train_ratio", scalar("config.train_ratio")?)?,
                min_positives: parse("min_positives", scalar("config.min_positives")?)?,
            },
            held_out_speakers: field("held_out_speakers")?.clone(),
            held_out_words: field("held_out_words")?.clone(),
            train,
            test,
        };
        plan.validate().map_err(|r| bad(0, r))?;
        Ok(plan)
    }
}
