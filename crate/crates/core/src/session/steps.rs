use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::context::Step;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedSteps {
    pub preamble: Option<String>,
    pub steps: Vec<Step>,
}

fn step_start() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)[.)]\s+").expect("static regex"))
}

/// Splits a model reply into an optional preamble and numbered steps.
///
/// A line matching `^\s*(\d+)[.)]\s+` starts a step; following lines are
/// joined onto it with a single space. Lines before the first step form the
/// preamble. Steps are renumbered 1..n in order and empty ones dropped.
/// Text with no numbered line becomes a single step.
pub fn parse_steps(raw: &str) -> ParsedSteps {
    let re = step_start();
    let mut preamble: Vec<&str> = Vec::new();
    let mut bodies: Vec<String> = Vec::new();
    for line in raw.lines() {
        if let Some(m) = re.find(line) {
            bodies.push(line[m.end()..].trim().to_owned());
        } else if let Some(cur) = bodies.last_mut() {
            let l = line.trim();
            if !l.is_empty() {
                if !cur.is_empty() {
                    cur.push(' ');
                }
                cur.push_str(l);
            }
        } else {
            preamble.push(line);
        }
    }
    if bodies.is_empty() {
        let whole = raw.trim();
        return ParsedSteps {
            preamble: None,
            steps: if whole.is_empty() {
                Vec::new()
            } else {
                vec![Step {
                    index: 1,
                    text: whole.to_owned(),
                }]
            },
        };
    }
    let preamble = preamble.join("\n").trim().to_owned();
    ParsedSteps {
        preamble: (!preamble.is_empty()).then_some(preamble),
        steps: bodies
            .into_iter()
            .filter(|b| !b.is_empty())
            .enumerate()
            .map(|(i, text)| Step { index: i + 1, text })
            .collect(),
    }
}

/// `raw` with step numbering removed and whitespace collapsed. Equal to
/// [`reconstruct`] of its parse.
pub fn normalized_without_numbers(raw: &str) -> String {
    let re = step_start();
    raw.lines()
        .map(|l| match re.find(l) {
            Some(m) => &l[m.end()..],
            None => l,
        })
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Preamble and step texts joined with single spaces.
pub fn reconstruct(parsed: &ParsedSteps) -> String {
    parsed
        .preamble
        .iter()
        .map(String::as_str)
        .chain(parsed.steps.iter().map(|s| s.text.as_str()))
        .flat_map(str::split_whitespace)
        .collect::<Vec<_>>()
        .join(" ")
}
