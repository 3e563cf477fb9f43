//! Plain-text checkpoint of a [`TrainedModel`].
//!
//! ```text
//! pathsel-checkpoint 1
//! net extractor identity 2,16,8
//! w <fan_in*fan_out hex words, row-major fan_in × fan_out>
//! b <fan_out hex words>
//! ...                      (one w/b pair per layer)
//! net invariant identity 8,8,4
//! ...
//! path 1,3
//! ```
//!
//! Networks appear in the order extractor, invariant, specific, classifier,
//! mine_invariant.0..2, mine_specific.0..2, policy. Every weight is written as
//! the 16-digit lowercase hex of its IEEE-754 bit pattern, so a save/load
//! round trip is bit-exact.

use std::path::Path;

use pathsel_core::disentangle::DisentangleModel;
use pathsel_core::domains::{DomainId, TransferPath};
use pathsel_core::mlp::Dense;
use pathsel_core::orchestrator::TrainedModel;
use pathsel_core::{Matrix, Mlp, OutputActivation};

use crate::error::{io_err, Error, Result};

const MAGIC: &str = "pathsel-checkpoint 1";

const NAMES: [&str; 11] = [
    "extractor",
    "invariant",
    "specific",
    "classifier",
    "mine_invariant.0",
    "mine_invariant.1",
    "mine_invariant.2",
    "mine_specific.0",
    "mine_specific.1",
    "mine_specific.2",
    "policy",
];

fn networks(m: &TrainedModel) -> [&Mlp; 11] {
    let d = &m.model;
    [
        &d.extractor,
        &d.invariant,
        &d.specific,
        &d.classifier,
        &d.mine_invariant[0],
        &d.mine_invariant[1],
        &d.mine_invariant[2],
        &d.mine_specific[0],
        &d.mine_specific[1],
        &d.mine_specific[2],
        &m.policy,
    ]
}

fn hex_words(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{:016x}", v.to_bits()));
    }
}

pub fn encode(m: &TrainedModel) -> String {
    let mut s = String::from(MAGIC);
    s.push('\n');
    for (name, net) in NAMES.iter().zip(networks(m)) {
        let dims: Vec<String> = net.layer_dims().iter().map(usize::to_string).collect();
        s.push_str(&format!("net {} {} {}\n", name, net.output_activation().name(), dims.join(",")));
        for layer in net.layers() {
            s.push_str("w ");
            hex_words(&mut s, layer.weights.data());
            s.push_str("\nb ");
            hex_words(&mut s, &layer.bias);
            s.push('\n');
        }
    }
    let ids: Vec<String> = m.path.ids().iter().map(DomainId::to_string).collect();
    s.push_str(&format!("path {}\n", ids.join(",")));
    s
}

pub fn save(path: &Path, m: &TrainedModel) -> Result<()> {
    std::fs::write(path, encode(m)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    decode(&text, path)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    file: &'a Path,
    line: u64,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next_tagged(&mut self, tag: &str) -> Result<&'a str> {
        let (i, l) = self.inner.next().ok_or_else(|| self.err(format!("expected `{tag}`, found end of file")))?;
        self.line = i as u64 + 1;
        match l.split_once(' ') {
            Some((t, rest)) if t == tag => Ok(rest),
            None if l == tag => Ok(""),
            _ => Err(self.err(format!("expected `{tag}` line"))),
        }
    }

    fn words(&self, rest: &str, expect: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = rest
            .split_ascii_whitespace()
            .map(|w| u64::from_str_radix(w, 16).map(f64::from_bits))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err("bad hex word"))?;
        if v.len() != expect {
            return Err(self.err(format!("expected {expect} values, found {}", v.len())));
        }
        Ok(v)
    }
}

pub fn decode(text: &str, file: &Path) -> Result<TrainedModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        file,
        line: 0,
    };
    let magic = lines.inner.next().map(|(_, l)| l);
    lines.line = 1;
    if magic != Some(MAGIC) {
        return Err(lines.err(format!("missing `{MAGIC}` header")));
    }
    let mut nets = Vec::with_capacity(NAMES.len());
    for name in NAMES {
        let header = lines.next_tagged("net")?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 || parts[0] != name {
            return Err(lines.err(format!("expected network `{name}`")));
        }
        let act = OutputActivation::from_name(parts[1]).ok_or_else(|| lines.err("unknown activation"))?;
        let dims: Vec<usize> = parts[2]
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| lines.err("bad layer dims"))?;
        if dims.len() < 2 {
            return Err(lines.err("need at least two layer dims"));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let rest = lines.next_tagged("w")?;
            let weights = lines.words(rest, w[0] * w[1])?;
            let rest = lines.next_tagged("b")?;
            let bias = lines.words(rest, w[1])?;
            layers.push(Dense {
                weights: Matrix::new(w[0], w[1], weights).map_err(|e| lines.err(e.to_string()))?,
                bias,
            });
        }
        nets.push(Mlp::from_layers(layers, act).map_err(|e| lines.err(e.to_string()))?);
    }
    let rest = lines.next_tagged("path")?;
    let ids: Vec<DomainId> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| lines.err("bad path id"))?
    };
    let mut it = nets.into_iter();
    let mut next = || it.next().expect("one per name");
    let model = DisentangleModel {
        extractor: next(),
        invariant: next(),
        specific: next(),
        classifier: next(),
        mine_invariant: [next(), next(), next()],
        mine_specific: [next(), next(), next()],
    };
    let policy = next();
    Ok(TrainedModel {
        model,
        policy,
        path: TransferPath(ids),
    })
}
