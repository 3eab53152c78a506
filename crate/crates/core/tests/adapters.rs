mod support;

use sast_triage::load_corpus;
use sast_triage::sast::{
    ingest_bandit, ingest_sarif, ingest_semgrep, ingest_sonarqube, normalize_to_corpus, parse_sarif, Finding,
};
use support::{as_pinned, fixture, pinned, BANDIT, SARIF, SEMGREP, SONARQUBE};

fn normalized(findings: Vec<Finding>) -> (Vec<Finding>, usize) {
    let corpus = load_corpus(&fixture("corpus/manifest.txt")).unwrap();
    normalize_to_corpus(findings, &corpus)
}

#[test]
fn bandit_report_matches_pinned_list() {
    let got = ingest_bandit(&fixture("reports/bandit.json")).unwrap();
    assert_eq!(as_pinned(&got), pinned(BANDIT));
}

#[test]
fn semgrep_report_matches_pinned_list() {
    let got = ingest_semgrep(&fixture("reports/semgrep.json")).unwrap();
    assert_eq!(as_pinned(&got), pinned(SEMGREP));
}

#[test]
fn sonarqube_pages_match_pinned_list() {
    let got = ingest_sonarqube(&fixture("reports/sonarqube.json")).unwrap();
    assert_eq!(as_pinned(&got), pinned(SONARQUBE));
}

#[test]
fn sarif_matches_pinned_list() {
    let got = ingest_sarif(&fixture("reports/minimal.sarif")).unwrap();
    assert_eq!(as_pinned(&got), pinned(SARIF));
}

#[test]
fn sonarqube_issue_outside_corpus_is_dropped() {
    let raw = ingest_sonarqube(&fixture("reports/sonarqube.json")).unwrap();
    let (kept, dropped) = normalized(raw);
    assert_eq!(dropped, 1);
    assert_eq!(kept.len(), SONARQUBE.len() - 1);
    assert!(kept.iter().all(|f| !f.file_id.starts_with("vendor/")));
}

#[test]
fn sarif_absolute_uri_resolves_to_corpus_id() {
    let raw = ingest_sarif(&fixture("reports/minimal.sarif")).unwrap();
    let (kept, dropped) = normalized(raw);
    assert_eq!(dropped, 0);
    assert!(kept.iter().any(|f| f.file_id == "securityeval/greet.py"));
    assert!(kept.iter().all(|f| !f.file_id.starts_with('/')));
}

#[test]
fn semgrep_sarif_output_agrees_with_json_output() {
    let json = ingest_semgrep(&fixture("reports/semgrep.json")).unwrap();
    let sarif = parse_sarif(&std::fs::read(fixture("reports/semgrep.sarif")).unwrap()).unwrap();
    let (sarif, _) = normalized(sarif);
    let key = |f: &Finding| (f.file_id.clone(), f.line, f.cwe);
    let mut a: Vec<_> = json.iter().map(key).collect();
    let mut b: Vec<_> = sarif.iter().map(key).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn bandit_and_semgrep_paths_are_already_corpus_ids() {
    for raw in [
        ingest_bandit(&fixture("reports/bandit.json")).unwrap(),
        ingest_semgrep(&fixture("reports/semgrep.json")).unwrap(),
    ] {
        let n = raw.len();
        let (kept, dropped) = normalized(raw);
        assert_eq!((kept.len(), dropped), (n, 0));
    }
}
