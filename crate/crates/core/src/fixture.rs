//! Deterministic synthetic report sets with prescribed marginals.
//!
//! A [`FixtureSpec`] fixes country/province/city counts, per-survey report
//! counts, the surveys-per-report histogram, the tags-per-report mean and
//! tail, and optional tag-pair counts. [`gen_fixture`] hits every count
//! exactly; only which report gets what is random, and that is fully
//! determined by the seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoDesignation;
use crate::report::{PublicReport, ReportId};
use crate::survey::{Catalog, QuestionId, SurveyId, TagId};
use crate::time::{Timestamp, SECONDS_PER_DAY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedCount {
    pub name: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvinceTarget {
    pub name: String,
    pub count: u64,
    /// City-resolution reports inside this province; the rest stay at
    /// province resolution.
    #[serde(default)]
    pub cities: Vec<NamedCount>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryTarget {
    pub name: String,
    pub count: u64,
    /// Reports not assigned to a listed province stay at country resolution.
    #[serde(default)]
    pub provinces: Vec<ProvinceTarget>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyTarget {
    /// Survey id or display name.
    pub survey: String,
    /// Number of reports that answer this survey.
    pub count: u64,
}

fn default_tail_above() -> u64 {
    80
}

fn default_tail_fraction() -> f64 {
    0.01
}

fn default_tail_max() -> u64 {
    90
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagTarget {
    /// Mean tags per report. Give this or `total`, not both.
    #[serde(default)]
    pub mean: Option<f64>,
    /// Exact number of selections across all reports.
    #[serde(default)]
    pub total: Option<u64>,
    #[serde(default = "default_tail_above")]
    pub tail_above: u64,
    /// Exact share of reports with more than `tail_above` tags.
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    #[serde(default = "default_tail_max")]
    pub tail_max: u64,
}

/// Pins a two-question co-occurrence: exactly `both` reports answer both
/// questions and exactly `count` of them select both tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTarget {
    pub question_a: QuestionId,
    pub question_b: QuestionId,
    pub both: u64,
    pub tag_a: TagId,
    pub tag_b: TagId,
    pub count: u64,
}

fn default_released_from() -> Timestamp {
    Timestamp::from_unix(1_388_534_400) // 2014-01-01
}

fn default_release_days() -> u32 {
    365
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub total_reports: u64,
    #[serde(default)]
    pub countries: Vec<CountryTarget>,
    /// Synthetic countries that absorb reports not covered by `countries`.
    #[serde(default)]
    pub filler_countries: u32,
    /// Per-survey report counts. Surveys not listed get no reports. When
    /// empty, each report answers one uniformly chosen survey.
    #[serde(default)]
    pub surveys: Vec<SurveyTarget>,
    /// Reports per number of surveys answered. Derived from `surveys` when
    /// absent (as many single-survey reports as possible).
    #[serde(default)]
    pub surveys_per_report: Option<BTreeMap<usize, u64>>,
    #[serde(default)]
    pub tags_per_report: Option<TagTarget>,
    #[serde(default)]
    pub pairs: Vec<PairTarget>,
    #[serde(default = "default_released_from")]
    pub released_from: Timestamp,
    #[serde(default = "default_release_days")]
    pub release_days: u32,
}

impl FixtureSpec {
    /// The bundled reference spec: 10,000 reports with the published
    /// geography, survey and tag statistics.
    pub fn reference() -> Self {
        serde_json::from_str(include_str!("../data/reference_fixture.json")).expect("bundled spec is valid")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FixtureError {
    #[error("inconsistent fixture spec: {}", .0.join("; "))]
    Inconsistent(Vec<String>),
}

/// What the generator actually produced, for cross-checking analytics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureLedger {
    pub reports: u64,
    pub surveys_per_report: BTreeMap<usize, u64>,
    pub survey_counts: BTreeMap<SurveyId, u64>,
    pub country_counts: BTreeMap<String, u64>,
    pub total_tags: u64,
    pub tail_reports: u64,
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub reports: Vec<PublicReport>,
    pub ledger: FixtureLedger,
}

/// Index view of the catalog used while generating.
struct Flat<'a> {
    catalog: &'a Catalog,
    /// per survey: question indexes
    survey_questions: Vec<Vec<usize>>,
    /// per question: (survey index, multi_select, tag ids)
    questions: Vec<(usize, bool, Vec<&'a TagId>)>,
    question_ids: Vec<&'a QuestionId>,
}

impl<'a> Flat<'a> {
    fn new(catalog: &'a Catalog) -> Self {
        let mut survey_questions = Vec::new();
        let mut questions = Vec::new();
        let mut question_ids = Vec::new();
        for (si, s) in catalog.surveys().iter().enumerate() {
            let mut qs = Vec::new();
            for q in &s.questions {
                qs.push(questions.len());
                questions.push((si, q.multi_select, q.tags.iter().map(|t| &t.id).collect()));
                question_ids.push(&q.id);
            }
            survey_questions.push(qs);
        }
        Self { catalog, survey_questions, questions, question_ids }
    }

    fn question_index(&self, id: &QuestionId) -> Option<usize> {
        self.question_ids.iter().position(|q| *q == id)
    }

    fn capacity(&self, q: usize) -> u64 {
        let (_, multi, tags) = &self.questions[q];
        if *multi {
            tags.len() as u64
        } else {
            1
        }
    }

    fn survey_index(&self, id: &SurveyId) -> usize {
        self.catalog.surveys().iter().position(|s| &s.id == id).expect("id from catalog")
    }
}

#[derive(Clone, Debug, Default)]
struct Plan {
    surveys: Vec<usize>,
    forced_tags: Vec<TagId>,
    forced_questions: Vec<usize>,
    banned_questions: HashSet<usize>,
    banned_pairs: Vec<(TagId, TagId)>,
    tags: u64,
}

fn filler_name(i: u32) -> String {
    let mut n = i;
    let mut suffix = String::new();
    loop {
        suffix.insert(0, char::from(b'a' + (n % 26) as u8));
        n /= 26;
        if n == 0 {
            break;
        }
        n -= 1;
    }
    format!("fixture country {suffix}")
}

fn check_geography(spec: &FixtureSpec, conflicts: &mut Vec<String>) -> Vec<(GeoDesignation, u64)> {
    let mut out = Vec::new();
    let mut sum = 0;
    for c in &spec.countries {
        sum += c.count;
        let Ok(country) = GeoDesignation::country(&c.name) else {
            conflicts.push(format!("invalid country name {:?}", c.name));
            continue;
        };
        let mut in_provinces = 0;
        for p in &c.provinces {
            in_provinces += p.count;
            let Ok(province) = GeoDesignation::province(&c.name, &p.name) else {
                conflicts.push(format!("invalid province name {:?}", p.name));
                continue;
            };
            let mut in_cities = 0;
            for city in &p.cities {
                in_cities += city.count;
                match GeoDesignation::city(&c.name, &p.name, &city.name) {
                    Ok(d) => out.push((d, city.count)),
                    Err(_) => conflicts.push(format!("invalid city name {:?}", city.name)),
                }
            }
            if in_cities > p.count {
                conflicts.push(format!("cities of {} sum to {in_cities} but province count is {}", p.name, p.count));
            }
            out.push((province, p.count.saturating_sub(in_cities)));
        }
        if in_provinces > c.count {
            conflicts.push(format!("provinces of {} sum to {in_provinces} but country count is {}", c.name, c.count));
        }
        out.push((country, c.count.saturating_sub(in_provinces)));
    }
    if sum > spec.total_reports {
        conflicts.push(format!("country counts sum to {sum} but total_reports is {}", spec.total_reports));
    } else if sum < spec.total_reports {
        if spec.filler_countries == 0 {
            conflicts.push(format!(
                "country counts sum to {sum} but total_reports is {} and filler_countries is 0",
                spec.total_reports
            ));
        } else {
            let rest = spec.total_reports - sum;
            let n = u64::from(spec.filler_countries);
            for i in 0..spec.filler_countries {
                let share = rest / n + u64::from(u64::from(i) < rest % n);
                out.push((GeoDesignation::country(&filler_name(i)).expect("letters only"), share));
            }
        }
    }
    out.retain(|(_, n)| *n > 0);
    out
}

/// Surveys-per-report sizes, one entry per report.
fn survey_sizes(
    spec: &FixtureSpec,
    targets: &[(usize, u64)],
    conflicts: &mut Vec<String>,
) -> Option<Vec<usize>> {
    let n = spec.total_reports;
    let memberships: u64 = targets.iter().map(|(_, c)| c).sum();
    let surveys = targets.len();
    if let Some((_, c)) = targets.iter().find(|(_, c)| *c > n) {
        conflicts.push(format!("a survey count of {c} exceeds total_reports {n}"));
        return None;
    }
    let hist = match &spec.surveys_per_report {
        Some(h) => {
            let reports: u64 = h.values().sum();
            let weighted: u64 = h.iter().map(|(k, v)| *k as u64 * v).sum();
            if reports != n {
                conflicts.push(format!("surveys_per_report covers {reports} reports but total_reports is {n}"));
            }
            if weighted != memberships {
                conflicts.push(format!(
                    "surveys_per_report implies {weighted} survey answers but survey counts sum to {memberships}"
                ));
            }
            if h.keys().any(|&k| k == 0 || k > surveys) {
                conflicts.push(format!("surveys_per_report sizes must lie in 1..={surveys}"));
            }
            h.clone()
        }
        None => {
            if memberships < n || memberships > n * surveys as u64 {
                conflicts.push(format!(
                    "survey counts sum to {memberships}, which cannot cover {n} reports with 1..={surveys} surveys each"
                ));
                return None;
            }
            let mut h = BTreeMap::new();
            let mut extra = memberships - n;
            let mut at_level = n;
            for size in 1..=surveys {
                let next = extra.min(at_level);
                if at_level - next > 0 {
                    h.insert(size, at_level - next);
                }
                extra -= next;
                at_level = next;
            }
            h
        }
    };
    Some(hist.iter().flat_map(|(&k, &v)| std::iter::repeat_n(k, v as usize)).collect())
}

/// Greedy bipartite realization: largest reports first, each taking the
/// surveys with the most remaining demand.
fn assign_surveys(
    sizes: &[usize],
    targets: &[(usize, u64)],
    rng: &mut ChaCha8Rng,
    conflicts: &mut Vec<String>,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]));
    let mut remaining: Vec<(usize, u64)> = targets.to_vec();
    let mut out = vec![Vec::new(); sizes.len()];
    for i in order {
        remaining.shuffle(rng);
        remaining.sort_by_key(|r| std::cmp::Reverse(r.1));
        let take = sizes[i];
        if remaining.iter().take(take).filter(|(_, c)| *c > 0).count() < take {
            conflicts.push("survey counts cannot be realized with the requested surveys_per_report".into());
            return out;
        }
        for slot in remaining.iter_mut().take(take) {
            slot.1 -= 1;
            out[i].push(slot.0);
        }
        out[i].sort_unstable();
    }
    out
}

fn sample_body_count(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    // 1 + negative binomial (gamma-Poisson mixture, shape 2)
    let excess = (mean - 1.0).max(0.01);
    let rate = Gamma::new(2.0, excess / 2.0).expect("positive parameters").sample(rng);
    1 + Poisson::new(rate.max(1e-9)).map_or(0.0, |p| p.sample(rng)) as u64
}

pub fn gen_fixture(spec: &FixtureSpec, catalog: &Catalog, seed: u64) -> Result<Fixture, FixtureError> {
    let flat = Flat::new(catalog);
    let mut conflicts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.total_reports as usize;

    // ---- validate targets
    let places = check_geography(spec, &mut conflicts);
    let mut targets: Vec<(usize, u64)> = Vec::new();
    for t in &spec.surveys {
        match catalog.find_survey(&t.survey) {
            Some(s) => {
                let idx = flat.survey_index(&s.id);
                if targets.iter().any(|(i, _)| *i == idx) {
                    conflicts.push(format!("survey {:?} listed twice", t.survey));
                }
                targets.push((idx, t.count));
            }
            None => conflicts.push(format!("unknown survey {:?}", t.survey)),
        }
    }
    let sizes = if targets.is_empty() {
        Some(vec![1; n])
    } else {
        survey_sizes(spec, &targets, &mut conflicts)
    };
    let tag_target = spec.tags_per_report.clone();
    if let Some(t) = &tag_target {
        if t.mean.is_some() == t.total.is_some() {
            conflicts.push("tags_per_report needs exactly one of mean or total".into());
        }
        if !(0.0..1.0).contains(&t.tail_fraction) {
            conflicts.push(format!("tail_fraction {} outside [0, 1)", t.tail_fraction));
        }
        if t.tail_max <= t.tail_above {
            conflicts.push("tail_max must exceed tail_above".into());
        }
    }
    let mut pairs = Vec::new();
    for p in &spec.pairs {
        let qa = flat.question_index(&p.question_a);
        let qb = flat.question_index(&p.question_b);
        let (Some(qa), Some(qb)) = (qa, qb) else {
            conflicts.push(format!("unknown question in pair {} / {}", p.question_a, p.question_b));
            continue;
        };
        if qa == qb {
            conflicts.push(format!("pair uses question {} twice", p.question_a));
        }
        if !flat.questions[qa].2.contains(&&p.tag_a) || !flat.questions[qb].2.contains(&&p.tag_b) {
            conflicts.push(format!("pair tags {} / {} do not belong to their questions", p.tag_a, p.tag_b));
            continue;
        }
        if p.count > p.both {
            conflicts.push(format!("pair count {} exceeds both {}", p.count, p.both));
        }
        pairs.push((p, qa, qb));
    }
    if n > 0 && places.is_empty() && conflicts.is_empty() {
        conflicts.push("no geography: give countries or filler_countries".into());
    }
    if !conflicts.is_empty() {
        return Err(FixtureError::Inconsistent(conflicts));
    }
    let sizes = sizes.expect("checked above");

    // ---- geography
    let mut designations: Vec<&GeoDesignation> =
        places.iter().flat_map(|(d, c)| std::iter::repeat_n(d, *c as usize)).collect();
    designations.shuffle(&mut rng);

    // ---- surveys
    let mut sizes = sizes;
    sizes.shuffle(&mut rng);
    let mut plans: Vec<Plan> = if targets.is_empty() {
        let s = catalog.surveys().len();
        (0..n).map(|_| Plan { surveys: vec![rng.random_range(0..s)], ..Plan::default() }).collect()
    } else {
        assign_surveys(&sizes, &targets, &mut rng, &mut conflicts)
            .into_iter()
            .map(|surveys| Plan { surveys, ..Plan::default() })
            .collect()
    };
    if !conflicts.is_empty() {
        return Err(FixtureError::Inconsistent(conflicts));
    }

    // ---- pair constraints
    for (p, qa, qb) in &pairs {
        let (sa, sb) = (flat.questions[*qa].0, flat.questions[*qb].0);
        let mut eligible: Vec<usize> = (0..n)
            .filter(|&i| plans[i].surveys.contains(&sa) && plans[i].surveys.contains(&sb))
            .collect();
        if (eligible.len() as u64) < p.both {
            return Err(FixtureError::Inconsistent(vec![format!(
                "only {} reports answer the surveys of {} and {}, fewer than both = {}",
                eligible.len(),
                p.question_a,
                p.question_b,
                p.both
            )]));
        }
        eligible.shuffle(&mut rng);
        let smaller = if flat.capacity(*qa) <= flat.capacity(*qb) { *qa } else { *qb };
        for (rank, &i) in eligible.iter().enumerate() {
            let plan = &mut plans[i];
            if (rank as u64) < p.count {
                plan.forced_tags.extend([p.tag_a.clone(), p.tag_b.clone()]);
            } else if (rank as u64) < p.both {
                plan.forced_questions.extend([*qa, *qb]);
                plan.banned_pairs.push((p.tag_a.clone(), p.tag_b.clone()));
            } else {
                plan.banned_questions.insert(smaller);
            }
        }
    }

    // ---- per-report bounds
    let question_of = |t: &TagId| -> usize {
        let q = &catalog.tag(t).expect("pair tags validated").question.id;
        flat.question_index(q).expect("catalog question")
    };
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for plan in &plans {
        let allowed: Vec<usize> = plan
            .surveys
            .iter()
            .flat_map(|&s| flat.survey_questions[s].iter().copied())
            .filter(|q| !plan.banned_questions.contains(q))
            .collect();
        let forced_qs: BTreeSet<usize> = plan.forced_tags.iter().map(question_of).collect();
        if forced_qs.iter().chain(&plan.forced_questions).any(|q| plan.banned_questions.contains(q)) {
            return Err(FixtureError::Inconsistent(vec!["pair targets force and forbid the same question".into()]));
        }
        let mut covered_q: BTreeSet<usize> = forced_qs.clone();
        covered_q.extend(&plan.forced_questions);
        let covered_s: BTreeSet<usize> = covered_q.iter().map(|&q| flat.questions[q].0).collect();
        let distinct_forced: BTreeSet<&TagId> = plan.forced_tags.iter().collect();
        let extra_q = plan.forced_questions.iter().filter(|q| !forced_qs.contains(q)).collect::<BTreeSet<_>>().len();
        let min = distinct_forced.len() + extra_q + plan.surveys.iter().filter(|s| !covered_s.contains(s)).count();
        let cap: u64 = allowed.iter().map(|&q| flat.capacity(q)).sum::<u64>() - plan.banned_pairs.len() as u64;
        lower.push(min as u64);
        upper.push(cap);
    }

    // ---- tags per report
    let mut tail = vec![false; n];
    let mut counts: Vec<u64> = vec![0; n];
    match &tag_target {
        Some(t) => {
            let target_total = t.total.unwrap_or_else(|| (t.mean.unwrap_or(0.0) * n as f64).round() as u64);
            let tail_n = (n as f64 * t.tail_fraction).round() as usize;
            let mut candidates: Vec<usize> =
                (0..n).filter(|&i| upper[i] > t.tail_above && lower[i] <= t.tail_max).collect();
            if candidates.len() < tail_n {
                return Err(FixtureError::Inconsistent(vec![format!(
                    "{tail_n} reports need more than {} tags but only {} can hold that many",
                    t.tail_above,
                    candidates.len()
                )]));
            }
            candidates.shuffle(&mut rng);
            for &i in candidates.iter().take(tail_n) {
                tail[i] = true;
                let lo = lower[i].max(t.tail_above + 1);
                let hi = upper[i].min(t.tail_max);
                counts[i] = rng.random_range(lo..=hi);
            }
            let tail_sum: u64 = counts.iter().sum();
            let body_n = (n - tail_n).max(1) as f64;
            let body_mean = (target_total.saturating_sub(tail_sum)) as f64 / body_n;
            let body_hi = |i: usize| upper[i].min(t.tail_above);
            for i in (0..n).filter(|&i| !tail[i]) {
                counts[i] = sample_body_count(&mut rng, body_mean).clamp(lower[i], body_hi(i).max(lower[i]));
            }
            // exact-sum correction on body reports
            let mut current: u64 = counts.iter().sum();
            if current < target_total {
                let mut open: Vec<usize> = (0..n).filter(|&i| !tail[i] && counts[i] < body_hi(i)).collect();
                while current < target_total && !open.is_empty() {
                    let k = rng.random_range(0..open.len());
                    let i = open[k];
                    counts[i] += 1;
                    current += 1;
                    if counts[i] >= body_hi(i) {
                        open.swap_remove(k);
                    }
                }
            } else {
                let mut open: Vec<usize> = (0..n).filter(|&i| !tail[i] && counts[i] > lower[i].max(1)).collect();
                while current > target_total && !open.is_empty() {
                    let k = rng.random_range(0..open.len());
                    let i = open[k];
                    counts[i] -= 1;
                    current -= 1;
                    if counts[i] <= lower[i].max(1) {
                        open.swap_remove(k);
                    }
                }
            }
            if current != target_total {
                return Err(FixtureError::Inconsistent(vec![format!(
                    "tag total {target_total} unreachable within per-report bounds (reached {current})"
                )]));
            }
        }
        None => {
            for i in 0..n {
                counts[i] = sample_body_count(&mut rng, 16.0).clamp(lower[i].max(1), upper[i].max(1));
            }
        }
    }
    for (plan, c) in plans.iter_mut().zip(&counts) {
        plan.tags = *c;
    }

    // ---- fill tags
    let mut reports = Vec::with_capacity(n);
    for (i, plan) in plans.iter().enumerate() {
        let selections = fill_tags(&flat, plan, &mut rng);
        let day = rng.random_range(0..spec.release_days.max(1));
        reports.push(PublicReport {
            report_id: ReportId::random(&mut rng),
            selections,
            designation: designations[i].clone(),
            released_at: Timestamp::from_unix(spec.released_from.unix() + i64::from(day) * i64::from(SECONDS_PER_DAY)),
        });
    }
    crate::export::sort_for_listing(&mut reports);

    let mut ledger = FixtureLedger { reports: n as u64, ..FixtureLedger::default() };
    for plan in &plans {
        *ledger.surveys_per_report.entry(plan.surveys.len()).or_insert(0) += 1;
        for &s in &plan.surveys {
            *ledger.survey_counts.entry(catalog.surveys()[s].id.clone()).or_insert(0) += 1;
        }
        ledger.total_tags += plan.tags;
    }
    for (d, c) in &places {
        *ledger.country_counts.entry(d.country_name().to_owned()).or_insert(0) += c;
    }
    ledger.tail_reports = tail.iter().filter(|&&t| t).count() as u64;
    Ok(Fixture { reports, ledger })
}

fn fill_tags<'a>(flat: &Flat<'a>, plan: &'a Plan, rng: &mut ChaCha8Rng) -> BTreeSet<TagId> {
    let mut chosen: BTreeSet<&'a TagId> = plan.forced_tags.iter().collect();
    let mut answered: HashSet<usize> = HashSet::new();
    let allowed: Vec<usize> = plan
        .surveys
        .iter()
        .flat_map(|&s| flat.survey_questions[s].iter().copied())
        .filter(|q| !plan.banned_questions.contains(q))
        .collect();
    for &q in &allowed {
        if flat.questions[q].2.iter().any(|t| chosen.contains(*t)) {
            answered.insert(q);
        }
    }
    let blocked = |chosen: &BTreeSet<&TagId>, t: &TagId| {
        plan.banned_pairs
            .iter()
            .any(|(a, b)| (t == a && chosen.contains(b)) || (t == b && chosen.contains(a)))
    };
    // Tries candidates in random order; returns true once one is taken.
    let mut take_one = |chosen: &mut BTreeSet<&'a TagId>, answered: &mut HashSet<usize>, qs: &[usize]| {
        let mut slots: Vec<(usize, &'a TagId)> =
            qs.iter().flat_map(|&q| flat.questions[q].2.iter().map(move |t| (q, *t))).collect();
        slots.shuffle(rng);
        for (q, t) in slots {
            let open = flat.questions[q].1 || !answered.contains(&q);
            if open && !chosen.contains(t) && !blocked(chosen, t) {
                chosen.insert(t);
                answered.insert(q);
                return;
            }
        }
    };
    for &q in &plan.forced_questions {
        if !answered.contains(&q) {
            take_one(&mut chosen, &mut answered, &[q]);
        }
    }
    for &s in &plan.surveys {
        let qs: Vec<usize> = allowed.iter().copied().filter(|&q| flat.questions[q].0 == s).collect();
        if !qs.iter().any(|q| answered.contains(q)) {
            take_one(&mut chosen, &mut answered, &qs);
        }
    }
    if (chosen.len() as u64) < plan.tags {
        let mut slots: Vec<(usize, &'a TagId)> =
            allowed.iter().flat_map(|&q| flat.questions[q].2.iter().map(move |t| (q, *t))).collect();
        slots.shuffle(rng);
        for (q, t) in slots {
            if chosen.len() as u64 >= plan.tags {
                break;
            }
            let open = flat.questions[q].1 || !answered.contains(&q);
            if open && !chosen.contains(t) && !blocked(&chosen, t) {
                chosen.insert(t);
                answered.insert(q);
            }
        }
    }
    chosen.into_iter().cloned().collect()
}
