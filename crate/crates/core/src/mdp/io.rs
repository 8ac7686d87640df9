//! JSON file format for MDPs.
//!
//! ```text
//! {
//!   "num_states": 2,
//!   "num_actions": 1,
//!   "discount": 0.9,
//!   "reward": [0.0, 1.0],
//!   "transition": [
//!     [0.5, 0.5],
//!     [0.0, 1.0]
//!   ]
//! }
//! ```
//!
//! `reward` is flat with index `state * num_actions + action`; `transition`
//! holds one row per pair in the same order. Validation failures point at
//! the offending line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Mdp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub reward: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

pub fn load_mdp(path: impl AsRef<Path>) -> Result<Mdp> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mdp(&text, &path.display().to_string())
}

/// Parses and validates an MDP document; `origin` labels error messages.
pub fn parse_mdp(text: &str, origin: &str) -> Result<Mdp> {
    let file: MdpFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let fail = |key: &str, index: Option<usize>, message: String| {
        let (line, column) = index
            .and_then(|i| locate_element(text, key, i))
            .or_else(|| locate_key(text, key))
            .unwrap_or((1, 1));
        Error::Parse {
            path: origin.to_string(),
            line,
            column,
            message,
        }
    };

    let pairs = file.num_states * file.num_actions;
    if file.num_states == 0 || file.num_actions == 0 {
        return Err(fail(
            "num_states",
            None,
            "num_states and num_actions must be positive".into(),
        ));
    }
    if file.reward.len() != pairs {
        return Err(fail(
            "reward",
            None,
            format!("expected {pairs} rewards, found {}", file.reward.len()),
        ));
    }
    if file.transition.len() != pairs {
        return Err(fail(
            "transition",
            None,
            format!("expected {pairs} transition rows, found {}", file.transition.len()),
        ));
    }
    if let Some(z) = file.transition.iter().position(|r| r.len() != file.num_states) {
        return Err(fail(
            "transition",
            Some(z),
            format!(
                "transition row {z} has {} entries, expected {}",
                file.transition[z].len(),
                file.num_states
            ),
        ));
    }

    let mdp = Mdp {
        num_states: file.num_states,
        num_actions: file.num_actions,
        transition: file.transition.into_iter().flatten().collect(),
        reward: file.reward,
        discount: file.discount,
    };
    if !(0.0..1.0).contains(&mdp.discount) {
        return Err(fail(
            "discount",
            None,
            format!("discount must lie in [0, 1), got {}", mdp.discount),
        ));
    }
    if let Some(z) = mdp.row_violation() {
        let sum: f64 = mdp.row(z).iter().sum();
        return Err(fail(
            "transition",
            Some(z),
            format!("transition row {z} is not a probability distribution (sum {sum})"),
        ));
    }
    if let Some(z) = mdp.reward_violation() {
        return Err(fail(
            "reward",
            Some(z),
            format!("reward {z} = {} is outside [0, 1]", mdp.reward[z]),
        ));
    }
    Ok(mdp)
}

impl Mdp {
    /// Serialises to the file format with one transition row per line.
    /// Numbers use shortest round-trip formatting, so reloading is exact.
    pub fn to_json(&self) -> String {
        let num = |v: f64| serde_json::to_string(&v).expect("finite float");
        let join = |vals: &[f64]| vals.iter().map(|&v| num(v)).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        out.push_str("{\n");
        let _ = writeln!(out, "  \"num_states\": {},", self.num_states);
        let _ = writeln!(out, "  \"num_actions\": {},", self.num_actions);
        let _ = writeln!(out, "  \"discount\": {},", num(self.discount));
        let _ = writeln!(out, "  \"reward\": [{}],", join(&self.reward));
        out.push_str("  \"transition\": [\n");
        for z in 0..self.num_pairs() {
            let sep = if z + 1 == self.num_pairs() { "" } else { "," };
            let _ = writeln!(out, "    [{}]{sep}", join(self.row(z)));
        }
        out.push_str("  ]\n}\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn key_offset(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    let mut from = 0;
    while let Some(found) = text[from..].find(&quoted) {
        let at = from + found;
        let rest = text[at + quoted.len()..].trim_start();
        if rest.starts_with(':') {
            return Some(at);
        }
        from = at + quoted.len();
    }
    None
}

fn locate_key(text: &str, key: &str) -> Option<(usize, usize)> {
    key_offset(text, key).map(|o| line_col(text, o))
}

/// Position of element `index` of the array stored under `key`.
fn locate_element(text: &str, key: &str, index: usize) -> Option<(usize, usize)> {
    let start = key_offset(text, key)?;
    let open = start + text[start..].find('[')?;
    let mut depth = 0usize;
    let mut element = 0usize;
    let mut seeking = true;
    for (off, ch) in text[open..].char_indices() {
        let at = open + off;
        match ch {
            '[' => {
                depth += 1;
                if depth == 2 && seeking {
                    if element == index {
                        return Some(line_col(text, at));
                    }
                    seeking = false;
                }
            }
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return None;
                }
            }
            ',' if depth == 1 => {
                element += 1;
                seeking = true;
            }
            c if depth == 1 && seeking && !c.is_whitespace() => {
                if element == index {
                    return Some(line_col(text, at));
                }
                seeking = false;
            }
            _ => {}
        }
    }
    None
}
