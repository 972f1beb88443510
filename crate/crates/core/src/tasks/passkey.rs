//! Passkey retrieval prompts over a byte-level vocabulary.
//!
//! Layout (pieces inside the body are joined by single spaces):
//!
//! ```text
//! <preamble>\n<filler × x> <key sentence> <filler × y>\nWhat is the pass key? The pass key is
//! ```

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{InfiniError, Result};
use crate::model::{GenerateOptions, Model};
use crate::numerics::Scalar;
use crate::par::{self, Execution};

pub const PREAMBLE: &str = "There is an important info hidden inside a lot of irrelevant text. \
Find it and memorize them. I will quiz you about the important information there.";
pub const FILLER: &str =
    "The grass is green. The sky is blue. The sun is yellow. Here we go. There and back again.";
pub const QUESTION: &str = "What is the pass key? The pass key is";

pub fn key_sentence(key: u32) -> String {
    format!("The pass key is {key}. Remember it. {key} is the pass key.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyPosition {
    Start,
    Middle,
    End,
}

impl KeyPosition {
    /// Class of a relative offset in `[0, 1)`: thirds of the prompt.
    pub fn classify(fraction: f64) -> Self {
        if fraction < 1.0 / 3.0 {
            KeyPosition::Start
        } else if fraction < 2.0 / 3.0 {
            KeyPosition::Middle
        } else {
            KeyPosition::End
        }
    }
}

impl fmt::Display for KeyPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeyPosition::Start => "start",
            KeyPosition::Middle => "middle",
            KeyPosition::End => "end",
        })
    }
}

impl FromStr for KeyPosition {
    type Err = InfiniError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(KeyPosition::Start),
            "middle" => Ok(KeyPosition::Middle),
            "end" => Ok(KeyPosition::End),
            other => Err(InfiniError::Input(format!("unknown key position `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PasskeyInstance {
    pub prompt: String,
    pub passkey: u32,
    pub x_repeats: usize,
    pub y_repeats: usize,
    pub position: KeyPosition,
}

impl PasskeyInstance {
    pub fn key_digits(&self) -> String {
        self.passkey.to_string()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| InfiniError::Input(format!("bad passkey record: {e}")))
    }
}

/// Builds the prompt for `passkey`, or for a random 5-digit key drawn from
/// `seed` when `passkey` is `None`.
pub fn passkey_generate(
    x_repeats: usize,
    y_repeats: usize,
    passkey: Option<u32>,
    seed: u64,
) -> Result<PasskeyInstance> {
    let key = match passkey {
        Some(k) if (1000..=99_999).contains(&k) => k,
        Some(k) => {
            return Err(InfiniError::Input(format!("passkey must have 4 or 5 digits, got {k}")))
        }
        None => ChaCha8Rng::seed_from_u64(seed).random_range(10_000..=99_999),
    };
    let mut body: Vec<String> = Vec::with_capacity(x_repeats + y_repeats + 1);
    body.extend(std::iter::repeat_n(FILLER.to_string(), x_repeats));
    body.push(key_sentence(key));
    body.extend(std::iter::repeat_n(FILLER.to_string(), y_repeats));
    let head = format!("{PREAMBLE}\n");
    let body = body.join(" ");
    let key_offset = head.len()
        + x_repeats * (FILLER.len() + 1)
        + "The pass key is ".len();
    let prompt = format!("{head}{body}\n{QUESTION}");
    let position = KeyPosition::classify(key_offset as f64 / prompt.len() as f64);
    Ok(PasskeyInstance {
        prompt,
        passkey: key,
        x_repeats,
        y_repeats,
        position,
    })
}

/// Recovers the key by scanning for the key sentence.
pub fn passkey_extract(prompt: &str) -> Option<u32> {
    let lead = "The pass key is ";
    let mut rest = prompt;
    while let Some(i) = rest.find(lead) {
        let after = &rest[i + lead.len()..];
        let digits: String = after.chars().take_while(char::is_ascii_digit).collect();
        if !digits.is_empty() && after[digits.len()..].starts_with(". Remember it.") {
            return digits.parse().ok();
        }
        rest = after;
    }
    None
}

/// `count` prompts with `x + y = total_repeats` and `x` uniform, keys random.
pub fn passkey_suite(total_repeats: usize, count: usize, seed: u64) -> Result<Vec<PasskeyInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = rng.random_range(0..=total_repeats);
            let key = rng.random_range(10_000..=99_999);
            passkey_generate(x, total_repeats - x, Some(key), 0)
        })
        .collect()
}

/// Fraction of key digits reproduced in order at the start of `output`
/// (leading whitespace ignored).
pub fn passkey_score(output: &str, instance: &PasskeyInstance) -> f64 {
    let key = instance.key_digits();
    let got = output.trim_start().as_bytes();
    let hits = key
        .bytes()
        .enumerate()
        .filter(|&(i, d)| got.get(i) == Some(&d))
        .count();
    hits as f64 / key.len() as f64
}

/// Byte-level tokenizer: one token per byte, vocabulary 256.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const VOCAB: usize = 256;

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.bytes().map(usize::from).collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        let bytes: Vec<u8> = tokens.iter().map(|&t| t.min(255) as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Greedy-decodes one answer per prompt (a leading space plus the key
/// length) and scores it. Returns per-instance scores in input order.
pub fn passkey_evaluate<T: Scalar>(
    model: &Model<T>,
    instances: &[PasskeyInstance],
    exec: Execution,
) -> Result<Vec<f64>> {
    if model.config.vocab_size < ByteTokenizer::VOCAB {
        return Err(InfiniError::Input(format!(
            "passkey prompts need a byte vocabulary of 256, model has {}",
            model.config.vocab_size
        )));
    }
    let tok = ByteTokenizer;
    par::map(exec, instances, |inst| {
        let prompt = tok.encode(&inst.prompt);
        let opts = GenerateOptions::greedy(inst.key_digits().len() + 1);
        let out = model.generate(&prompt, &opts)?;
        Ok(passkey_score(&tok.decode(&out), inst))
    })
    .into_iter()
    .collect()
}
