//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sast_triage::corpus::GroundTruthLabel;
use sast_triage::llm::{ChatRequest, Transport, TransportFailure};
use sast_triage::sast::Finding;
use sast_triage::scoring::MatchConfig;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(rel: &str) -> PathBuf {
    repo_root().join("fixtures").join(rel)
}

pub type Pinned = (&'static str, &'static str, Option<u32>, Option<u32>, &'static str);

pub const BANDIT: &[Pinned] = &[
    (
        "bandit",
        "pyt/command_injection.py",
        Some(78),
        Some(1),
        "B404:blacklist",
    ),
    (
        "bandit",
        "pyt/command_injection.py",
        Some(78),
        Some(6),
        "B602:subprocess_popen_with_shell_equals_true",
    ),
    (
        "bandit",
        "pyt/command_injection.py",
        Some(78),
        Some(10),
        "B607:start_process_with_partial_path",
    ),
    (
        "bandit",
        "pyt/command_injection.py",
        Some(78),
        Some(10),
        "B602:subprocess_popen_with_shell_equals_true",
    ),
    (
        "bandit",
        "pyt/db_connect.py",
        Some(259),
        Some(3),
        "B105:hardcoded_password_string",
    ),
    (
        "bandit",
        "pyt/fetch_report.py",
        Some(295),
        Some(5),
        "B501:request_with_no_cert_validation",
    ),
    (
        "bandit",
        "pyt/load_settings.py",
        Some(20),
        Some(6),
        "B506:yaml_load",
    ),
    (
        "bandit",
        "pyt/session_restore.py",
        Some(502),
        Some(3),
        "B403:blacklist",
    ),
    (
        "bandit",
        "pyt/session_restore.py",
        Some(502),
        Some(8),
        "B301:blacklist",
    ),
    (
        "bandit",
        "pyt/session_restore.py",
        Some(502),
        Some(12),
        "B302:blacklist",
    ),
    (
        "bandit",
        "securityeval/calc.py",
        Some(78),
        Some(2),
        "B307:blacklist",
    ),
    (
        "bandit",
        "securityeval/debug_server.py",
        Some(94),
        Some(12),
        "B201:flask_debug_true",
    ),
    (
        "bandit",
        "securityeval/os_ping.py",
        Some(78),
        Some(11),
        "B605:start_process_with_a_shell",
    ),
    (
        "bandit",
        "securityeval/password_hash.py",
        Some(327),
        Some(5),
        "B324:hashlib",
    ),
    (
        "bandit",
        "securityeval/sql_lookup.py",
        Some(89),
        Some(7),
        "B608:hardcoded_sql_expressions",
    ),
    (
        "bandit",
        "securityeval/sql_lookup.py",
        Some(89),
        Some(14),
        "B608:hardcoded_sql_expressions",
    ),
];

pub const SEMGREP: &[Pinned] = &[
    (
        "semgrep",
        "pyt/command_injection.py",
        Some(78),
        Some(6),
        "python.subprocess-shell-true",
    ),
    (
        "semgrep",
        "pyt/command_injection.py",
        Some(78),
        Some(10),
        "python.subprocess-shell-true",
    ),
    (
        "semgrep",
        "pyt/fetch_report.py",
        Some(295),
        Some(5),
        "python.requests-verify-false",
    ),
    (
        "semgrep",
        "pyt/load_settings.py",
        Some(502),
        Some(6),
        "python.yaml-unsafe-load",
    ),
    (
        "semgrep",
        "pyt/session_restore.py",
        Some(502),
        Some(8),
        "python.pickle-loads",
    ),
    (
        "semgrep",
        "securityeval/calc.py",
        Some(95),
        Some(2),
        "python.eval-use",
    ),
    (
        "semgrep",
        "securityeval/calc.py",
        None,
        Some(7),
        "python.builtin-input",
    ),
    (
        "semgrep",
        "securityeval/debug_server.py",
        Some(489),
        Some(12),
        "python.flask-debug",
    ),
    (
        "semgrep",
        "securityeval/greet.py",
        Some(79),
        Some(9),
        "python.flask-html-concat",
    ),
    (
        "semgrep",
        "securityeval/os_ping.py",
        Some(78),
        Some(11),
        "python.os-system-injection",
    ),
    (
        "semgrep",
        "securityeval/password_hash.py",
        Some(327),
        Some(5),
        "python.md5-hash",
    ),
    (
        "semgrep",
        "securityeval/sql_lookup.py",
        Some(89),
        Some(7),
        "python.sql-string-format",
    ),
];

/// Before path normalization; the last issue lies outside the corpus.
pub const SONARQUBE: &[Pinned] = &[
    (
        "sonarqube",
        "securityeval/sql_lookup.py",
        Some(89),
        Some(7),
        "python:S2077",
    ),
    (
        "sonarqube",
        "securityeval/sql_lookup.py",
        Some(89),
        Some(15),
        "pythonsecurity:S3649",
    ),
    (
        "sonarqube",
        "pyt/fetch_report.py",
        Some(295),
        Some(5),
        "python:S4830",
    ),
    (
        "sonarqube",
        "securityeval/debug_server.py",
        Some(489),
        Some(12),
        "python:S4507",
    ),
    (
        "sonarqube",
        "pyt/db_connect.py",
        Some(798),
        Some(3),
        "python:S2068",
    ),
    (
        "sonarqube",
        "securityeval/greet.py",
        None,
        Some(3),
        "python:S1481",
    ),
    (
        "sonarqube",
        "vendor/legacy_db.py",
        Some(89),
        Some(40),
        "python:S2077",
    ),
];

/// Before path normalization; the location-less result is skipped.
pub const SARIF: &[Pinned] = &[
    (
        "sarif:CodeQL",
        "pyt/command_injection.py",
        Some(78),
        Some(6),
        "py/command-line-injection",
    ),
    (
        "sarif:CodeQL",
        "securityeval/read_file.py",
        Some(22),
        Some(11),
        "py/path-injection",
    ),
    (
        "sarif:CodeQL",
        "/work/repo/securityeval/greet.py",
        Some(79),
        Some(9),
        "py/reflective-xss",
    ),
    (
        "sarif:CodeQL",
        "securityeval/calc.py",
        Some(95),
        Some(2),
        "py/code-injection",
    ),
    (
        "sarif:CodeQL",
        "securityeval/calc.py",
        None,
        Some(7),
        "py/code-injection",
    ),
];

pub type Row = (String, String, Option<u32>, Option<u32>, String);

pub fn as_pinned(findings: &[Finding]) -> Vec<Row> {
    findings
        .iter()
        .map(|f| {
            (
                f.source.to_string(),
                f.file_id.clone(),
                f.cwe.map(|c| c.number()),
                f.line,
                f.raw_label.clone(),
            )
        })
        .collect()
}

pub fn pinned(rows: &[Pinned]) -> Vec<Row> {
    rows.iter()
        .map(|&(s, f, c, l, r)| (s.into(), f.into(), c, l, r.into()))
        .collect()
}

/// Maximum one-to-one matching by trying every assignment of findings to
/// truth labels (or to nothing). Only for tiny inputs.
pub fn optimal_tp(findings: &[Finding], truth: &[GroundTruthLabel], cfg: &MatchConfig) -> usize {
    fn ok(f: &Finding, t: &GroundTruthLabel, cfg: &MatchConfig) -> bool {
        let Some(line) = f.line else { return false };
        if f.file_id != t.file_id {
            return false;
        }
        if cfg.require_cwe && f.cwe != Some(t.cwe) {
            return false;
        }
        line.abs_diff(t.line) <= cfg.line_tolerance
    }
    fn go(i: usize, used: &mut Vec<bool>, f: &[Finding], t: &[GroundTruthLabel], cfg: &MatchConfig) -> usize {
        if i == f.len() {
            return 0;
        }
        let mut best = go(i + 1, used, f, t, cfg);
        for j in 0..t.len() {
            if !used[j] && ok(&f[i], &t[j], cfg) {
                used[j] = true;
                best = best.max(1 + go(i + 1, used, f, t, cfg));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; truth.len()], findings, truth, cfg)
}

/// Lines a fake model flags, with the CWE it names for each.
const PATTERNS: &[(&str, u32)] = &[
    ("shell=True", 78),
    ("os.system(", 78),
    ("execute(", 89),
    ("pickle.loads", 502),
    ("eval(", 95),
    ("verify=False", 295),
    ("debug=True", 489),
    ("md5", 327),
    ("yaml.load", 20),
    ("open(", 22),
];

fn code_of(prompt: &str) -> &str {
    let start = prompt.find("```").map(|i| i + 3).unwrap_or(0);
    let end = prompt
        .rfind("```")
        .filter(|&e| e >= start)
        .unwrap_or(prompt.len());
    &prompt[start..end]
}

fn listed_labels(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("list of vulnerabilities: "))
        .map(|l| l.split(", ").map(str::to_string).collect())
        .unwrap_or_default()
}

/// A deterministic stand-in for a chat model: flags lines by keyword and
/// answers in the format each prompt asks for.
#[derive(Default)]
pub struct FakeModel {
    pub calls: AtomicUsize,
}

impl FakeModel {
    pub fn answer(prompt: &str) -> String {
        let code = code_of(prompt);
        let hits: Vec<(&str, u32)> = code
            .lines()
            .filter_map(|l| {
                PATTERNS
                    .iter()
                    .find(|(p, _)| l.contains(p))
                    .map(|&(_, c)| (l.trim(), c))
            })
            .collect();
        if code.contains("def index") {
            return "I could not find anything in this file.".into();
        }
        if prompt.contains("simply write None") {
            if hits.is_empty() {
                return "None".into();
            }
            return hits.iter().map(|(l, _)| format!("\"{l}\"\n")).collect();
        }
        let listed = listed_labels(prompt);
        let mut items: Vec<String> = hits
            .iter()
            .map(|(l, c)| serde_json::json!({"label": format!("CWE-{c}"), "line of Code": l}).to_string())
            .collect();
        // An extra label outside any candidate list, for Case 1 to drop.
        if !listed.is_empty() && code.contains("import") {
            items.push(serde_json::json!({"label": "CWE-1004", "line of Code": "1"}).to_string());
        }
        format!("Here is the result:\n```json\n[{}]\n```", items.join(",\n"))
    }
}

impl Transport for FakeModel {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Self::answer(&request.messages[0].content))
    }
}

/// Refuses every call and counts the attempts.
#[derive(Default)]
pub struct NoNetwork {
    pub attempts: AtomicUsize,
}

impl Transport for NoNetwork {
    fn send(&self, _request: &ChatRequest) -> Result<String, TransportFailure> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(TransportFailure::Fatal("network use attempted".into()))
    }
}

/// Two recorded answers about pyt/command_injection.py to prompts that
/// differ by one phrase.
pub const VERBOSE_ANSWER: &str = r#"[
  {
    "label": "CWE-78: Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')",
    "line of Code": "command = 'echo' + param + ' >> ' + 'menu.txt'"
  },
  {
    "label": "CWE-78: Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')",
    "line of Code": "subprocess.call(command, shell=True)"
  },
  {
    "label": "CWE-78: Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')",
    "line of Code": "subprocess.call('echo Menu: > menu.txt', shell=True)"
  }
]"#;

pub const TERSE_ANSWER: &str = r#"[
  {
    "label": "Command Injection",
    "line of Code": "subprocess.call(command, shell=True)"
  },
  {
    "label": "Command Injection",
    "line of Code": "subprocess.call('echo Menu: > menu.txt', shell=True)"
  }
]"#;

/// A run over the fixture corpus with both archived tool reports.
pub fn fixture_config(out: &Path, store: &Path, run_id: &str) -> sast_triage::RunConfig {
    use sast_triage::protocol::ExperimentId;
    use sast_triage::ToolSpec;
    sast_triage::RunConfig {
        manifest: fixture("corpus/manifest.txt"),
        out: out.to_path_buf(),
        run_id: Some(run_id.into()),
        tools: vec![
            ToolSpec::Bandit {
                report: Some(fixture("reports/bandit.json")),
            },
            ToolSpec::Semgrep {
                report: Some(fixture("reports/semgrep.json")),
            },
        ],
        experiments: ExperimentId::ALL.to_vec(),
        seed: 7,
        workers: 3,
        llm: sast_triage::pipeline::LlmSettings {
            store: store.to_path_buf(),
            ..Default::default()
        },
        ..Default::default()
    }
}
