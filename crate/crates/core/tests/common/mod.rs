//! Helpers shared by integration test targets.
#![allow(dead_code)]

use interlock::Observation;
use sha2::{Digest, Sha256};

pub const PROPOSE_GOLDEN: &str = include_str!("../golden/propose.golden");
pub const REFLECT_GOLDEN: &str = include_str!("../golden/reflect.golden");

/// Hash prefix computed without going through the library's helpers.
pub fn expected_ref(obs: &Observation) -> String {
    let json = serde_json::to_string(obs).unwrap();
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect::<String>()[..16].to_string()
}

enum Token<'a> {
    Text(&'a str),
    Image,
    Slot(&'a str),
}

fn tokenize(template: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    loop {
        let img = rest.find("<image>");
        let slot = rest.find('{');
        let next = match (img, slot) {
            (None, None) => break,
            (Some(i), None) => i,
            (None, Some(s)) => s,
            (Some(i), Some(s)) => i.min(s),
        };
        if next > 0 {
            out.push(Token::Text(&rest[..next]));
        }
        if rest[next..].starts_with("<image>") {
            out.push(Token::Image);
            rest = &rest[next + "<image>".len()..];
        } else {
            let close = rest[next..].find('}').expect("unclosed slot") + next;
            out.push(Token::Slot(&rest[next + 1..close]));
            rest = &rest[close + 1..];
        }
    }
    if !rest.is_empty() {
        out.push(Token::Text(rest));
    }
    out
}

/// Reverses a rendering: every `<image>[obs:..]` tag must name the expected
/// observation, and every slot must hold its expected value. Returns the
/// template text with tags stripped and slots unfilled.
pub fn unfill(
    golden: &str,
    rendered: &str,
    images: &[&Observation],
    slots: &[(&str, String)],
) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = rendered;
    let mut image = 0;
    for tok in tokenize(golden) {
        match tok {
            Token::Text(t) => {
                rest = rest
                    .strip_prefix(t)
                    .ok_or_else(|| format!("literal mismatch at {:?}", &rest[..rest.len().min(40)]))?;
                out.push_str(t);
            }
            Token::Image => {
                let obs = images.get(image).ok_or("more images than observations")?;
                let tag = format!("<image>[obs:{}]", expected_ref(obs));
                rest = rest.strip_prefix(tag.as_str()).ok_or_else(|| format!("image {image} tag mismatch"))?;
                image += 1;
                out.push_str("<image>");
            }
            Token::Slot(name) => {
                let (_, value) = slots
                    .iter()
                    .find(|(n, _)| *n == name)
                    .ok_or_else(|| format!("no value for slot {name}"))?;
                rest = rest
                    .strip_prefix(value.as_str())
                    .ok_or_else(|| format!("slot {name} mismatch: expected {value:?}"))?;
                out.push('{');
                out.push_str(name);
                out.push('}');
            }
        }
    }
    if !rest.is_empty() {
        return Err(format!("trailing text {rest:?}"));
    }
    if image != images.len() {
        return Err(format!("{image} images used, {} supplied", images.len()));
    }
    Ok(out)
}

pub fn history_value(history: &[String]) -> String {
    if history.is_empty() {
        "none".into()
    } else {
        history.join(", ")
    }
}

pub fn colors_value(obs: &Observation) -> String {
    let mut pieces: Vec<_> = obs.pieces.iter().collect();
    pieces.sort_by_key(|p| p.id);
    pieces.iter().map(|p| p.color.clone()).collect::<Vec<_>>().join(", ")
}
