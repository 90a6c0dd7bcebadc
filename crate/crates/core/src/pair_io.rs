//! Line-oriented text format for attributed graph pairs.
//!
//! ```text
//! AGPAIR v1
//! params <n> <m> <q_u> <rho_u> <q_a> <rho_a> <seed>
//! truth <image of 0> <image of 1> ... <image of n-1>
//! g1.uu
//! <i> <j>          one line per user edge, i < j
//! end
//! g1.ua
//! <i> <a>          one line per user-attribute edge
//! end
//! g2.uu
//! end
//! g2.ua
//! end
//! ```
//!
//! Indices are 0-based. Duplicate edges are an error rather than being merged.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph_model::{AttributedGraph, AttributedGraphPair, ModelParams, Permutation};

pub const HEADER: &str = "AGPAIR v1";

const SECTIONS: [&str; 4] = ["g1.uu", "g1.ua", "g2.uu", "g2.ua"];

/// Renders a pair in the text format. Floats use the shortest round-trip representation.
pub fn format_pair(pair: &AttributedGraphPair) -> String {
    let p = &pair.params;
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(
        out,
        "params {} {} {} {} {} {} {}",
        p.n, p.m, p.q_u, p.rho_u, p.q_a, p.rho_a, pair.seed
    )
    .unwrap();
    out.push_str("truth");
    for &v in pair.truth.as_slice() {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
    for (name, g) in [("g1", &pair.g1), ("g2", &pair.g2)] {
        writeln!(out, "{name}.uu").unwrap();
        for (i, j) in g.user_edges() {
            writeln!(out, "{i} {j}").unwrap();
        }
        out.push_str("end\n");
        writeln!(out, "{name}.ua").unwrap();
        for (i, a) in g.attr_edges() {
            writeln!(out, "{i} {a}").unwrap();
        }
        out.push_str("end\n");
    }
    out
}

pub fn write_pair(pair: &AttributedGraphPair, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_pair(pair)).map_err(|e| Error::io(path, e))
}

pub fn read_pair(path: impl AsRef<Path>) -> Result<AttributedGraphPair> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pair(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((idx, line)) => {
                self.last = idx + 1;
                Ok(line.trim_end())
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            line: self.last,
            message: message.into(),
        }
    }
}

fn parse_field<T: std::str::FromStr>(lines: &Lines<'_>, token: Option<&str>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| lines.err(format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| lines.err(format!("cannot parse {what} from {token:?}")))
}

pub fn parse_pair(text: &str) -> Result<AttributedGraphPair> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };

    if lines.next_line()? != HEADER {
        return Err(lines.err(format!("expected header {HEADER:?}")));
    }

    let line = lines.next_line()?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some("params") {
        return Err(lines.err("expected params line"));
    }
    let n: usize = parse_field(&lines, tok.next(), "n")?;
    let m: usize = parse_field(&lines, tok.next(), "m")?;
    let q_u: f64 = parse_field(&lines, tok.next(), "q_u")?;
    let rho_u: f64 = parse_field(&lines, tok.next(), "rho_u")?;
    let q_a: f64 = parse_field(&lines, tok.next(), "q_a")?;
    let rho_a: f64 = parse_field(&lines, tok.next(), "rho_a")?;
    let seed: u64 = parse_field(&lines, tok.next(), "seed")?;
    if tok.next().is_some() {
        return Err(lines.err("trailing tokens on params line"));
    }
    let params = ModelParams::new(n, m, q_u, rho_u, q_a, rho_a)
        .map_err(|e| lines.err(e.to_string()))?;

    let line = lines.next_line()?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some("truth") {
        return Err(lines.err("expected truth line"));
    }
    let images = tok
        .map(|t| parse_field::<usize>(&lines, Some(t), "truth image"))
        .collect::<Result<Vec<_>>>()?;
    if images.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "truth lists {} images but n = {n}",
            images.len()
        )));
    }
    let truth = Permutation::new(images)?;

    let mut edge_lists: Vec<Vec<(usize, usize)>> = Vec::with_capacity(4);
    for section in SECTIONS {
        if lines.next_line()? != section {
            return Err(lines.err(format!("expected section {section:?}")));
        }
        let user_section = section.ends_with(".uu");
        let (bound_b, what_b) = if user_section { (n, "user") } else { (m, "attribute") };
        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        loop {
            let line = lines.next_line()?;
            if line == "end" {
                break;
            }
            let mut tok = line.split_whitespace();
            let a: usize = parse_field(&lines, tok.next(), "user index")?;
            let b: usize = parse_field(&lines, tok.next(), what_b)?;
            if tok.next().is_some() {
                return Err(lines.err("trailing tokens on edge line"));
            }
            if a >= n {
                return Err(lines.err(format!("user {a} out of range 0..{n}")));
            }
            if b >= bound_b {
                return Err(lines.err(format!("{what_b} {b} out of range 0..{bound_b}")));
            }
            if user_section && a >= b {
                return Err(lines.err(format!("user edge ({a}, {b}) must satisfy i < j")));
            }
            if !seen.insert((a, b)) {
                return Err(lines.err(format!("duplicate edge ({a}, {b}) in {section}")));
            }
            edges.push((a, b));
        }
        edge_lists.push(edges);
    }
    if let Some(extra) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Format {
            line: extra.0 + 1,
            message: "content after final section".into(),
        });
    }

    let g1 = AttributedGraph::from_edges(n, m, &edge_lists[0], &edge_lists[1])?;
    let g2 = AttributedGraph::from_edges(n, m, &edge_lists[2], &edge_lists[3])?;
    AttributedGraphPair::new(g1, g2, truth, params, seed)
}
