// SPDX-License-Identifier: Apache-2.0

use super::lex;

/// Byte offsets at which each line starts, paired with whether the line begins
/// inside a multi-line string literal (and so must not be re-indented).
fn line_starts(text: &str) -> Vec<(usize, bool)> {
    let strings = lex::tokenize(text).strings;
    let mut starts = vec![0];
    starts.extend(text.match_indices('\n').map(|(i, _)| i + 1).filter(|&i| i < text.len()));
    starts.into_iter().map(|s| (s, strings.iter().any(|sp| sp.start < s && s < sp.end))).collect()
}

fn leading_ws(line: &str) -> usize {
    line.len() - line.trim_start_matches([' ', '\t']).len()
}

/// Remove the common leading indentation. Returns the dedented text and the
/// removed prefix. Lines that start inside a string literal are left alone.
pub fn dedent(text: &str) -> (String, String) {
    let lines = line_starts(text);
    let line_at = |k: usize| {
        let s = lines[k].0;
        let e = lines.get(k + 1).map_or(text.len(), |l| l.0);
        &text[s..e]
    };
    let mut prefix: Option<&str> = None;
    for (k, &(_, protected)) in lines.iter().enumerate() {
        let line = line_at(k);
        if protected || line.trim().is_empty() {
            continue;
        }
        let ws = &line[..leading_ws(line)];
        prefix = Some(match prefix {
            None => ws,
            Some(p) => {
                let common = p.bytes().zip(ws.bytes()).take_while(|(a, b)| a == b).count();
                &p[..common]
            }
        });
    }
    let prefix = prefix.unwrap_or("").to_string();
    if prefix.is_empty() {
        return (text.to_string(), prefix);
    }
    let mut out = String::with_capacity(text.len());
    for (k, &(_, protected)) in lines.iter().enumerate() {
        let line = line_at(k);
        if protected {
            out.push_str(line);
        } else if line.trim().is_empty() {
            let cut = leading_ws(line).min(prefix.len());
            out.push_str(&line[cut..]);
        } else {
            out.push_str(&line[prefix.len()..]);
        }
    }
    (out, prefix)
}

/// Prefix every non-blank line with `indent`, skipping lines inside string
/// literals and, when `skip_first` is set, the first line.
pub fn reindent(text: &str, indent: &str, skip_first: bool) -> String {
    let lines = line_starts(text);
    let mut out = String::with_capacity(text.len() + lines.len() * indent.len());
    for (k, &(s, protected)) in lines.iter().enumerate() {
        let e = lines.get(k + 1).map_or(text.len(), |l| l.0);
        let line = &text[s..e];
        if !(protected || line.trim().is_empty() || (skip_first && k == 0)) {
            out.push_str(indent);
        }
        out.push_str(line);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedent_and_reindent_round_trip() {
        let src = "    def f(self):\n        x = '''\nkeep\n  this'''\n\n        return x\n";
        let (d, prefix) = dedent(src);
        assert_eq!(prefix, "    ");
        assert_eq!(d, "def f(self):\n    x = '''\nkeep\n  this'''\n\n    return x\n");
        assert_eq!(reindent(&d, &prefix, false), src);
    }

    #[test]
    fn nothing_to_dedent() {
        let (d, p) = dedent("def f():\n    pass\n");
        assert_eq!(p, "");
        assert_eq!(d, "def f():\n    pass\n");
    }
}
