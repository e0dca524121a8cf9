//! Deterministic synthetic corpora: a separable two-cluster regression
//! task, a heavy-tailed story-point fixture for cap testing, a
//! keyword-separable classification corpus, and randomized projects for
//! property tests. All generators are pure functions of their seeds.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{CapMode, Issue, IssueDataset, Scenario, SplitPlan};
use crate::rng;

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap()
}

fn make_issue(project: &str, repository: &str, idx: usize, title: String, sp: f64) -> Issue {
    let created = base_time() + Duration::minutes(idx as i64 * 7);
    Issue {
        issue_key: format!("{project}-{idx}"),
        project_key: project.into(),
        repository: repository.into(),
        created,
        resolved: Some(created + Duration::hours(30)),
        issue_type: "Story".into(),
        components: vec![],
        title,
        description: String::new(),
        story_point: sp,
        sp_assignment_count: Some(1),
        fields_changed_after_sp: Some(false),
        is_resolved: true,
    }
}

fn phrase(pool: &[&str], len: usize, rng: &mut impl Rng) -> String {
    (0..len)
        .map(|_| pool[rng.gen_range(0..pool.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

const LOW_WORDS: &[&str] = &[
    "tweak", "typo", "label", "color", "padding", "tooltip", "copy", "caption",
    "icon", "margin", "hint", "spacing",
];
const HIGH_WORDS: &[&str] = &[
    "rearchitect", "migration", "scheduler", "replication", "persistence",
    "sharding", "consensus", "failover", "compaction", "snapshot", "quorum",
    "partitioning",
];

/// A 600-issue task of two disjoint-vocabulary clusters labeled SP 1 and
/// SP 8, alternating in time, with a 400/100/100 plan.
///
/// Every part is exactly half one cluster and half the other, so the
/// training median is 4.5 and a median predictor scores MAE 3.5 on the
/// test part by construction.
pub fn two_cluster_task(seed: u64) -> (IssueDataset, SplitPlan) {
    let mut word_rng = rng::stream(rng::combine(seed, 0x2c));
    let issues: Vec<Issue> = (0..600)
        .map(|i| {
            let len = word_rng.gen_range(4..8);
            if i % 2 == 0 {
                make_issue("CLU", "synth", i, phrase(LOW_WORDS, len, &mut word_rng), 1.0)
            } else {
                make_issue("CLU", "synth", i, phrase(HIGH_WORDS, len, &mut word_rng), 8.0)
            }
        })
        .collect();
    let dataset = IssueDataset::new(issues).expect("generated issues are valid");
    let plan = SplitPlan {
        scenario: Scenario::WithinProject,
        train: (0..400).collect(),
        validation: (400..500).collect(),
        test: (500..600).collect(),
        cap_mode: CapMode::None,
        cap_value: None,
    };
    (dataset, plan)
}

/// A 4667-issue project whose story points have a heavy [25, 100] tail
/// arranged so that, under the 60/20/20 chronological split:
///
/// - the nearest-rank 90th percentile over all story points is exactly 21
///   (4100 values below 21, 133 exactly 21, 434 above), and
/// - capping at 21 affects exactly 319 training, 47 validation, and 68
///   test issues.
pub fn capped_tail_fixture() -> IssueDataset {
    const LOW: &[f64] = &[1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 20.0];
    const HIGH: &[f64] = &[25.0, 30.0, 50.0, 100.0];
    // (part size, high-tail count, exactly-21 count) per chronological part
    const PARTS: &[(usize, usize, usize)] = &[(2800, 319, 80), (933, 47, 27), (934, 68, 26)];

    let mut rng = rng::stream(0xca9_f17);
    let mut sps = Vec::with_capacity(4667);
    for &(size, high, exact) in PARTS {
        let mut part: Vec<f64> = Vec::with_capacity(size);
        for k in 0..high {
            part.push(HIGH[k % HIGH.len()]);
        }
        part.extend(std::iter::repeat(21.0).take(exact));
        for k in 0..size - high - exact {
            part.push(LOW[k % LOW.len()]);
        }
        part.shuffle(&mut rng);
        sps.extend(part);
    }

    let issues: Vec<Issue> = sps
        .into_iter()
        .enumerate()
        .map(|(i, sp)| {
            let len = 3 + i % 5;
            let pool = if sp > 21.0 { HIGH_WORDS } else { LOW_WORDS };
            make_issue("TAIL", "synth", i, phrase(pool, len, &mut rng), sp)
        })
        .collect();
    IssueDataset::new(issues).expect("generated issues are valid")
}

const CLASS_WORDS: &[(f64, &[&str])] = &[
    (1.0, &["button", "alignment", "font", "banner"]),
    (2.0, &["pagination", "filter", "sorting", "export"]),
    (3.0, &["caching", "session", "timeout", "retry"]),
    (5.0, &["indexing", "pipeline", "migration", "cluster"]),
];
const FILLER_WORDS: &[&str] =
    &["the", "when", "user", "should", "after", "update", "issue", "screen"];

/// A classification corpus whose story point is recoverable from class
/// keyword signatures mixed with shared filler words. Classes cycle, so
/// any contiguous split is class-balanced up to rounding.
pub fn keyword_class_corpus(seed: u64, n: usize) -> IssueDataset {
    let mut rng = rng::stream(rng::combine(seed, 0xc1a5));
    let issues: Vec<Issue> = (0..n)
        .map(|i| {
            let (sp, words) = CLASS_WORDS[i % CLASS_WORDS.len()];
            let mut tokens: Vec<&str> = (0..3)
                .map(|_| words[rng.gen_range(0..words.len())])
                .collect();
            for _ in 0..rng.gen_range(2..5) {
                tokens.push(FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())]);
            }
            tokens.shuffle(&mut rng);
            make_issue("KEY", "synth", i, tokens.join(" "), sp)
        })
        .collect();
    IssueDataset::new(issues).expect("generated issues are valid")
}

const POKER_WEIGHTED: &[(f64, usize)] = &[
    (0.5, 2),
    (1.0, 8),
    (2.0, 10),
    (3.0, 8),
    (5.0, 6),
    (8.0, 4),
    (13.0, 2),
    (20.0, 1),
];

fn weighted_sp(rng: &mut impl Rng) -> f64 {
    let total: usize = POKER_WEIGHTED.iter().map(|&(_, w)| w).sum();
    let mut roll = rng.gen_range(0..total);
    for &(sp, w) in POKER_WEIGHTED {
        if roll < w {
            return sp;
        }
        roll -= w;
    }
    unreachable!("weights cover the roll range")
}

/// A randomized single-project dataset: weighted planning-poker story
/// points, mixed-vocabulary titles, strictly increasing creation times
/// with jitter, and roughly one unresolved issue in ten.
pub fn random_project(seed: u64, project: &str, repository: &str, n: usize) -> IssueDataset {
    let mut rng = rng::stream(rng::combine(seed, rng::fnv1a64(project)));
    let mut created = base_time();
    let issues: Vec<Issue> = (0..n)
        .map(|i| {
            created += Duration::minutes(rng.gen_range(5..180));
            let pool = if rng.gen_bool(0.5) { LOW_WORDS } else { HIGH_WORDS };
            let len = rng.gen_range(3..9);
            let mut issue =
                make_issue(project, repository, i, phrase(pool, len, &mut rng), weighted_sp(&mut rng));
            issue.created = created;
            if rng.gen_bool(0.1) {
                issue.resolved = None;
                issue.is_resolved = false;
            } else {
                issue.resolved = Some(created + Duration::hours(rng.gen_range(1..200)));
            }
            issue
        })
        .collect();
    IssueDataset::new(issues).expect("generated issues are valid")
}
