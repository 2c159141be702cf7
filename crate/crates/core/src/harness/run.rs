//! Evaluation runs, subjective grading sources and offline scripted models.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parse::{gold_answer, normalize_phrase, parse_closed_answer, words, ParsedAnswer};
use super::sanity::sanity_prompt;
use super::{
    answer_entropy, apply_strategy, classify_kv, classify_subjective, EvalRecord, HarnessError,
    KvLabel, MetricsCell, MetricsReport, Strategy, SubjectiveGrades,
};
use crate::benchgen::{QaItem, QuestionType};
use crate::config::PipelineConfig;
use crate::conflict::{KnowledgeTriplet, TargetKind};
use crate::digest::seed_from;
use crate::modelio::{query_mllm, Condition, MllmClient, MllmRequest, ScriptedMllm};

/// Source of grades for subjective responses.
pub trait SubjectiveGrader: Sync {
    fn grade(&self, qa: &QaItem, strategy: Strategy, answer: &str, knowledge: &str) -> Option<SubjectiveGrades>;
}

/// Leaves every subjective item pending.
pub struct NoGrader;

impl SubjectiveGrader for NoGrader {
    fn grade(&self, _: &QaItem, _: Strategy, _: &str, _: &str) -> Option<SubjectiveGrades> {
        None
    }
}

/// Grades by word overlap with the two references.
pub struct AutoGrader;

impl SubjectiveGrader for AutoGrader {
    fn grade(&self, qa: &QaItem, _: Strategy, answer: &str, knowledge: &str) -> Option<SubjectiveGrades> {
        Some(auto_grade(answer, &qa.gold, knowledge))
    }
}

/// Grades collected from review decisions, keyed by (qa id, strategy).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradeBook {
    grades: BTreeMap<String, SubjectiveGrades>,
}

impl GradeBook {
    fn key(qa_id: &str, strategy: Strategy) -> String {
        format!("{qa_id}/{strategy}")
    }

    pub fn insert(&mut self, qa_id: &str, strategy: Strategy, grades: SubjectiveGrades) {
        self.grades.insert(Self::key(qa_id, strategy), grades);
    }

    pub fn get(&self, qa_id: &str, strategy: Strategy) -> Option<&SubjectiveGrades> {
        self.grades.get(&Self::key(qa_id, strategy))
    }

    pub fn len(&self) -> usize {
        self.grades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }
}

impl SubjectiveGrader for GradeBook {
    fn grade(&self, qa: &QaItem, strategy: Strategy, _: &str, _: &str) -> Option<SubjectiveGrades> {
        self.get(&qa.id, strategy).copied()
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "on", "in", "at", "of", "to", "is", "are", "be", "doing", "with", "and",
    "some", "it", "they", "he", "she",
];

fn content_words(text: &str) -> Vec<String> {
    words(text)
        .into_iter()
        .filter(|w| w.len() > 2 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn closeness(answer: &str, reference: &str) -> u8 {
    let (a, r) = (normalize_phrase(answer), normalize_phrase(reference));
    if a.is_empty() || r.is_empty() {
        return 0;
    }
    let padded = |s: &str| format!(" {s} ");
    if a == r || padded(&a).contains(&padded(&r)) || padded(&r).contains(&padded(&a)) {
        return 2;
    }
    let rw = content_words(&r);
    u8::from(content_words(&a).iter().any(|w| rw.contains(w)))
}

/// Deterministic stand-in for a human grader: an answer is relevant unless
/// empty or a refusal, responsive when it is a short phrase, and close to a
/// reference by containment (2) or a shared content word (1).
pub fn auto_grade(answer: &str, vision_ref: &str, knowledge_ref: &str) -> SubjectiveGrades {
    let w = words(answer);
    let refusal = w.is_empty()
        || w.starts_with(&["sorry".to_string()])
        || w.starts_with(&["i".to_string(), "cannot".to_string()])
        || w.starts_with(&["i".to_string(), "can't".to_string()])
        || w.starts_with(&["unable".to_string()]);
    SubjectiveGrades {
        relevancy: u8::from(!refusal),
        responsiveness: u8::from(!w.is_empty() && w.len() <= 8),
        closeness_vision: closeness(answer, vision_ref),
        closeness_knowledge: closeness(answer, knowledge_ref),
    }
}

fn unclassified(qa: &QaItem, strategy: Strategy, model: &str, prompt: String) -> EvalRecord {
    EvalRecord {
        qa_id: qa.id.clone(),
        triplet_id: qa.triplet_id.clone(),
        qtype: qa.qtype,
        target_kind: qa.target_kind,
        strategy,
        model: model.to_string(),
        prompt,
        raw_with_image: None,
        raw_text_only: None,
        answer_with_image: ParsedAnswer::Unparsed,
        answer_text_only: ParsedAnswer::Unparsed,
        kv_label: None,
        correct: false,
        grades: None,
        tie: false,
        knowledge_unparsed: false,
        error: None,
    }
}

fn query_pair<C: MllmClient + ?Sized>(
    qa: &QaItem,
    prompt: &str,
    client: &C,
    config: &PipelineConfig,
) -> Result<(String, String), HarnessError> {
    let t = config.eval_temperature;
    let text_only = query_mllm(&MllmRequest::text_only(prompt, t, 1), client)?;
    let with_image = query_mllm(&MllmRequest::with_image(&qa.image_uri, prompt, t, 1), client)?;
    Ok((
        with_image.texts.into_iter().next().unwrap_or_default(),
        text_only.texts.into_iter().next().unwrap_or_default(),
    ))
}

/// Queries every item under every strategy with and without its image.
/// Failures are kept on the record; nothing is classified yet.
pub fn collect_responses<C: MllmClient + ?Sized>(
    items: &[QaItem],
    client: &C,
    strategies: &[Strategy],
    config: &PipelineConfig,
) -> Vec<EvalRecord> {
    let model = client.id();
    let jobs: Vec<(&QaItem, Strategy)> = items
        .iter()
        .flat_map(|qa| strategies.iter().map(move |&s| (qa, s)))
        .collect();
    jobs.par_iter()
        .map(|&(qa, strategy)| {
            let prompt = apply_strategy(&qa.prompt(), strategy, config);
            let mut record = unclassified(qa, strategy, &model, prompt);
            match query_pair(qa, &record.prompt, client, config) {
                Ok((with_image, text_only)) => {
                    record.raw_with_image = Some(with_image);
                    record.raw_text_only = Some(text_only);
                }
                Err(e) => record.error = Some(e.to_string()),
            }
            record
        })
        .collect()
}

/// (Re)computes the parsed answers and label of `record` from its raw texts.
pub fn classify_record<G: SubjectiveGrader + ?Sized>(record: &mut EvalRecord, qa: &QaItem, grader: &G) {
    record.kv_label = None;
    record.correct = false;
    record.tie = false;
    record.grades = None;
    let (Some(with_image), Some(text_only)) = (&record.raw_with_image, &record.raw_text_only) else {
        return;
    };
    let answer = parse_closed_answer(with_image, qa);
    let knowledge = parse_closed_answer(text_only, qa);
    let gold = gold_answer(qa);
    record.knowledge_unparsed = qa.qtype.is_closed() && knowledge.is_unparsed();
    if qa.qtype.is_closed() {
        record.kv_label = Some(classify_kv(&answer, &knowledge, &gold));
        record.correct = answer == gold;
    } else {
        record.grades = grader.grade(qa, record.strategy, with_image, text_only);
        if knowledge == gold {
            record.kv_label = Some(KvLabel::NonDiscriminative);
            record.correct = match &record.grades {
                Some(g) => g.closeness_vision == 2,
                None => answer == gold,
            };
        } else if let Some(g) = &record.grades {
            let (label, tie) = classify_subjective(g);
            record.kv_label = Some(label);
            record.tie = tie;
            record.correct = label == KvLabel::Vision;
        }
    }
    record.answer_with_image = answer;
    record.answer_text_only = knowledge;
}

/// Aggregates records into per-cell metrics. Cells are ordered by question
/// type, strategy, then target kind with the all-kinds row last.
pub fn build_report(model: &str, records: &[EvalRecord]) -> MetricsReport {
    let mut groups: BTreeMap<(QuestionType, Strategy), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.qtype, r.strategy)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((qtype, strategy), rs) in groups {
        for kind in TargetKind::ALL {
            let subset: Vec<&EvalRecord> = rs.iter().copied().filter(|r| r.target_kind == kind).collect();
            if !subset.is_empty() {
                cells.push(MetricsCell::from_records(qtype, strategy, Some(kind), &subset));
            }
        }
        cells.push(MetricsCell::from_records(qtype, strategy, None, &rs));
    }
    MetricsReport {
        model: model.to_string(),
        incomplete: cells.iter().any(|c| c.incomplete),
        cells,
        sanity: None,
        entropy: None,
    }
}

/// Queries, classifies and aggregates in one go.
pub fn run_eval<C: MllmClient + ?Sized, G: SubjectiveGrader + ?Sized>(
    items: &[QaItem],
    client: &C,
    strategies: &[Strategy],
    config: &PipelineConfig,
    grader: &G,
) -> Result<(Vec<EvalRecord>, MetricsReport), HarnessError> {
    if items.is_empty() || strategies.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut records = collect_responses(items, client, strategies, config);
    let by_id: BTreeMap<&str, &QaItem> = items.iter().map(|q| (q.id.as_str(), q)).collect();
    for r in &mut records {
        classify_record(r, by_id[r.qa_id.as_str()], grader);
    }
    let report = build_report(&client.id(), &records);
    Ok((records, report))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub samples: usize,
    pub temperature: f64,
    /// Mean entropy in bits per question type.
    pub mean_bits: BTreeMap<QuestionType, f64>,
    pub per_item: BTreeMap<String, f64>,
    pub failed: usize,
}

/// Samples every item with its image and records the answer entropy.
pub fn run_entropy<C: MllmClient + ?Sized>(
    items: &[QaItem],
    client: &C,
    config: &PipelineConfig,
) -> Result<EntropySummary, HarnessError> {
    if items.is_empty() {
        return Err(HarnessError::Empty);
    }
    let samples = config.entropy_samples;
    let results: Vec<(&QaItem, Result<f64, HarnessError>)> = items
        .par_iter()
        .map(|qa| {
            let request = MllmRequest::with_image(
                &qa.image_uri,
                qa.prompt(),
                config.entropy_temperature,
                samples as u32,
            );
            let r = query_mllm(&request, client)
                .map_err(HarnessError::from)
                .and_then(|resp| answer_entropy(&resp.texts, qa));
            (qa, r)
        })
        .collect();
    let mut summary = EntropySummary {
        samples,
        temperature: config.entropy_temperature,
        ..Default::default()
    };
    let mut sums: BTreeMap<QuestionType, (f64, usize)> = BTreeMap::new();
    for (qa, r) in results {
        match r {
            Ok(bits) => {
                summary.per_item.insert(qa.id.clone(), bits);
                let e = sums.entry(qa.qtype).or_default();
                e.0 += bits;
                e.1 += 1;
            }
            Err(HarnessError::TooFewSamples(n)) => return Err(HarnessError::TooFewSamples(n)),
            Err(_) => summary.failed += 1,
        }
    }
    summary.mean_bits = sums.into_iter().map(|(q, (s, n))| (q, s / n as f64)).collect();
    Ok(summary)
}

/// One canned reply set of a replay script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub qa_id: String,
    pub condition: Condition,
    pub strategy: Strategy,
    pub texts: Vec<String>,
}

/// Resolves script entries against the benchmark into a replaying client.
pub fn scripted_client(
    id: &str,
    entries: &[ScriptEntry],
    items: &[QaItem],
    config: &PipelineConfig,
) -> Result<ScriptedMllm, HarnessError> {
    let by_id: BTreeMap<&str, &QaItem> = items.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut seen: BTreeMap<(Option<String>, String), &Vec<String>> = BTreeMap::new();
    let mut client = ScriptedMllm::new(id);
    for e in entries {
        let qa = by_id
            .get(e.qa_id.as_str())
            .ok_or_else(|| HarnessError::Script(format!("unknown qa id {}", e.qa_id)))?;
        if e.texts.is_empty() {
            return Err(HarnessError::Script(format!("entry for {} has no texts", e.qa_id)));
        }
        let prompt = apply_strategy(&qa.prompt(), e.strategy, config);
        let image = match e.condition {
            Condition::WithImage => Some(qa.image_uri.clone()),
            Condition::TextOnly => None,
        };
        let key = (image.clone(), prompt.clone());
        if let Some(previous) = seen.get(&key) {
            if *previous != &e.texts {
                return Err(HarnessError::Script(format!(
                    "conflicting replies for the same request ({})",
                    e.qa_id
                )));
            }
        }
        seen.insert(key, &e.texts);
        client.insert(image.as_deref(), prompt, e.texts.clone());
    }
    Ok(client)
}

/// Behavior of the simulated offline model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationProfile {
    /// Probability that a with-image answer follows the image.
    pub vision_rate: f64,
    pub seed: u64,
}

impl Default for SimulationProfile {
    fn default() -> Self {
        Self {
            vision_rate: 0.6,
            seed: 0,
        }
    }
}

fn unit_interval(parts: &[&str]) -> f64 {
    (seed_from(parts) >> 11) as f64 / (1u64 << 53) as f64
}

/// The most commonsense distractor of an MC item (highest NPMI).
fn knowledge_option(mc: &QaItem) -> Option<(&str, &str)> {
    let text = mc
        .bin_trace
        .iter()
        .max_by(|a, b| a.npmi.total_cmp(&b.npmi))
        .map(|t| t.text.as_str())?;
    let option = mc.options.iter().find(|o| o.text == text)?;
    Some((option.label.as_str(), option.text.as_str()))
}

/// Builds a scripted client that behaves like a model with parametric
/// commonsense: text-only it answers "No" / the most plausible distractor,
/// with the image it follows the image at `profile.vision_rate`. Sanity
/// probes for `triplets` are answered with a negation.
pub fn simulated_client(
    id: &str,
    items: &[QaItem],
    triplets: &[KnowledgeTriplet],
    strategies: &[Strategy],
    profile: &SimulationProfile,
    config: &PipelineConfig,
) -> ScriptedMllm {
    let mc_by_image: BTreeMap<&str, &QaItem> = items
        .iter()
        .filter(|q| q.qtype == QuestionType::Mc)
        .map(|q| (q.image_id.as_str(), q))
        .collect();
    let mut client = ScriptedMllm::new(id);
    let seed = profile.seed.to_string();
    for qa in items {
        let plausible = mc_by_image.get(qa.image_id.as_str()).and_then(|mc| knowledge_option(mc));
        let (vision, knowledge) = match qa.qtype {
            QuestionType::Yn => ("Yes.".to_string(), "No.".to_string()),
            QuestionType::Mc => {
                let gold = format!("({}) {}", qa.gold, qa.gold_text());
                let k = plausible.map(|(l, t)| format!("({l}) {t}")).unwrap_or_else(|| "I am not sure.".into());
                (gold, k)
            }
            QuestionType::Subj => {
                let k = plausible.map(|(_, t)| t.to_string()).unwrap_or_else(|| "I am not sure.".into());
                (qa.gold.clone(), k)
            }
        };
        for &strategy in strategies {
            let prompt = apply_strategy(&qa.prompt(), strategy, config);
            let u = unit_interval(&[&seed, &qa.id, strategy.as_str()]);
            let primary = if u < profile.vision_rate { &vision } else { &knowledge };
            let alternate = if u < profile.vision_rate { &knowledge } else { &vision };
            let sampled = vec![primary.clone(), primary.clone(), primary.clone(), alternate.clone()];
            client.insert(Some(&qa.image_uri), prompt.clone(), sampled);
            client.insert(None, prompt, vec![knowledge.clone()]);
        }
        // Entropy probes use the plain prompt with the image.
        if !strategies.contains(&Strategy::Plain) {
            let u = unit_interval(&[&seed, &qa.id, Strategy::Plain.as_str()]);
            let primary = if u < profile.vision_rate { &vision } else { &knowledge };
            let alternate = if u < profile.vision_rate { &knowledge } else { &vision };
            client.insert(
                Some(&qa.image_uri),
                qa.prompt(),
                vec![primary.clone(), primary.clone(), primary.clone(), alternate.clone()],
            );
        }
    }
    for t in triplets {
        client.insert(None, sanity_prompt(t), vec!["No, that would be highly unusual.".into()]);
    }
    client
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::QaOption;

    fn item(qtype: QuestionType, id: &str) -> QaItem {
        let (options, gold) = match qtype {
            QuestionType::Mc => (
                vec![
                    QaOption { label: "A".into(), text: "sleeping".into() },
                    QaOption { label: "B".into(), text: "fixing a computer".into() },
                ],
                "B".to_string(),
            ),
            QuestionType::Yn => (vec![], "Yes".to_string()),
            QuestionType::Subj => (vec![], "fixing a computer".to_string()),
        };
        QaItem {
            id: id.into(),
            triplet_id: "tri".into(),
            image_id: "img".into(),
            image_uri: "images/img.svg".into(),
            target_kind: TargetKind::Action,
            qtype,
            question: match qtype {
                QuestionType::Yn => "Is the baby on the bed fixing a computer?".into(),
                QuestionType::Mc => "What is the baby doing on the bed?".into(),
                QuestionType::Subj => "What is the baby doing on the bed? Answer with a single phrase.".into(),
            },
            options,
            gold,
            bin_trace: vec![crate::benchgen::BinTrace { bin: 0, npmi: 0.3, text: "sleeping".into() }],
        }
    }

    #[test]
    fn auto_grades() {
        let g = auto_grade("Fixing a computer.", "fixing a computer", "sleeping");
        assert_eq!((g.relevancy, g.responsiveness, g.closeness_vision, g.closeness_knowledge), (1, 1, 2, 0));
        let g = auto_grade("using a laptop computer", "fixing a computer", "sleeping");
        assert_eq!(g.closeness_vision, 1);
        assert_eq!(auto_grade("Sorry, I can't tell.", "x", "y").relevancy, 0);
    }

    #[test]
    fn scripted_vision_case_end_to_end() {
        let config = PipelineConfig::default();
        let items = vec![item(QuestionType::Yn, "img-yn")];
        let entries = vec![
            ScriptEntry { qa_id: "img-yn".into(), condition: Condition::TextOnly, strategy: Strategy::Plain, texts: vec!["No".into()] },
            ScriptEntry { qa_id: "img-yn".into(), condition: Condition::WithImage, strategy: Strategy::Plain, texts: vec!["Yes".into()] },
        ];
        let client = scripted_client("s", &entries, &items, &config).unwrap();
        let (records, report) = run_eval(&items, &client, &[Strategy::Plain], &config, &NoGrader).unwrap();
        assert_eq!(records[0].kv_label, Some(KvLabel::Vision));
        assert!(records[0].correct);
        let cell = report.cell(QuestionType::Yn, Strategy::Plain, None).unwrap();
        assert_eq!(cell.accuracy, Some(1.0));
        assert_eq!(cell.memorization_ratio, Some(0.0));
    }

    #[test]
    fn subjective_pending_without_grades() {
        let config = PipelineConfig::default();
        let items = vec![item(QuestionType::Subj, "img-subj")];
        let client = ScriptedMllm::new("s").with_fallback("sleeping");
        let (records, report) = run_eval(&items, &client, &[Strategy::Plain], &config, &NoGrader).unwrap();
        assert_eq!(records[0].kv_label, None);
        assert!(report.incomplete);
        let (records, _) = run_eval(&items, &client, &[Strategy::Plain], &config, &AutoGrader).unwrap();
        assert_eq!(records[0].kv_label, Some(KvLabel::Knowledge));
    }

    #[test]
    fn unscripted_requests_fail_per_item() {
        let config = PipelineConfig::default();
        let items = vec![item(QuestionType::Yn, "img-yn")];
        let (records, report) = run_eval(&items, &ScriptedMllm::new("s"), &[Strategy::Plain], &config, &NoGrader).unwrap();
        assert!(records[0].error.is_some());
        assert_eq!(report.cells[0].counts.failed, 1);
        assert!(run_eval(&[], &ScriptedMllm::new("s"), &[Strategy::Plain], &config, &NoGrader).is_err());
    }

    #[test]
    fn simulated_model_answers_knowledge_text_only() {
        let config = PipelineConfig::default();
        let items = vec![item(QuestionType::Yn, "img-yn"), item(QuestionType::Mc, "img-mc"), item(QuestionType::Subj, "img-subj")];
        let profile = SimulationProfile { vision_rate: 0.0, seed: 0 };
        let client = simulated_client("sim", &items, &[], &[Strategy::Plain], &profile, &config);
        let (records, _) = run_eval(&items, &client, &[Strategy::Plain], &config, &AutoGrader).unwrap();
        for r in &records {
            assert_eq!(r.kv_label, Some(KvLabel::Knowledge), "{}", r.qa_id);
        }
    }
}
