use std::collections::BTreeMap;

pub const INIT_PROMPT: &str = include_str!("../../assets/prompts/init.txt");
pub const REFINE_PROMPT: &str = include_str!("../../assets/prompts/refine.txt");
pub const SUMMARY_PROMPT: &str = include_str!("../../assets/prompts/summary.txt");
pub const RESTRUCTURE_PROMPT: &str = include_str!("../../assets/prompts/restructure.txt");

/// Replaces every `{name}` with its value; unknown placeholders stay as written.
pub fn fill(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        match tail.find('}') {
            Some(end) => {
                let name = &tail[1..end];
                match vars.get(name) {
                    Some(v) => out.push_str(v),
                    None => out.push_str(&tail[..=end]),
                }
                rest = &tail[end + 1..];
            }
            None => {
                out.push_str(tail);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
