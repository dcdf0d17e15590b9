//! Newick tree reader/writer: `(name:length, (..):length, ...)label:length;`

use super::PhyloTree;
use crate::error::{Error, Result};
use std::path::Path;

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        self.skip_ws();
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::parse(
                "<newick>",
                format!("expected `{}` at byte {}", b as char, self.pos),
            ))
        }
    }

    fn label(&mut self) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b) if !matches!(b, b'(' | b')' | b',' | b':' | b';') && !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn length(&mut self) -> Result<f64> {
        self.skip_ws();
        if self.peek() != Some(b':') {
            return Ok(0.0);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
        {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse("<newick>", format!("bad branch length at byte {start}")))
    }

    fn node(&mut self, tree: &mut TreeBuilder) -> Result<usize> {
        self.skip_ws();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut kids = vec![self.node(tree)?];
            loop {
                self.skip_ws();
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                        kids.push(self.node(tree)?);
                    }
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => {
                        return Err(Error::parse(
                            "<newick>",
                            format!("expected `,` or `)` at byte {}", self.pos),
                        ))
                    }
                }
            }
            let label = self.label();
            let len = self.length()?;
            Ok(tree.internal(kids, label, len))
        } else {
            let label = self.label();
            let len = self.length()?;
            if label.is_none() {
                return Err(Error::parse(
                    "<newick>",
                    format!("leaf without a label at byte {}", self.pos),
                ));
            }
            Ok(tree.leaf(label.unwrap(), len))
        }
    }
}

struct TreeBuilder {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    length: Vec<f64>,
    name: Vec<Option<String>>,
}

impl TreeBuilder {
    fn leaf(&mut self, name: String, len: f64) -> usize {
        self.parent.push(None);
        self.children.push(vec![]);
        self.length.push(len);
        self.name.push(Some(name));
        self.parent.len() - 1
    }

    fn internal(&mut self, kids: Vec<usize>, name: Option<String>, len: f64) -> usize {
        let id = self.leaf(name.unwrap_or_default(), len);
        self.name[id] = name_opt(&self.name[id]);
        for &k in &kids {
            self.parent[k] = Some(id);
        }
        self.children[id] = kids;
        id
    }
}

fn name_opt(n: &Option<String>) -> Option<String> {
    match n {
        Some(s) if !s.is_empty() => Some(s.clone()),
        _ => None,
    }
}

pub fn parse_newick(text: &str) -> Result<PhyloTree> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
    };
    let mut builder = TreeBuilder {
        parent: vec![],
        children: vec![],
        length: vec![],
        name: vec![],
    };
    let root = parser.node(&mut builder)?;
    parser.expect(b';')?;
    let tree = PhyloTree {
        parent: builder.parent,
        children: builder.children,
        branch_length: builder.length,
        name: builder.name,
        root,
    };
    tree.validate()?;
    Ok(tree)
}

pub fn read_newick(path: &Path) -> Result<PhyloTree> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_newick(&text).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::parse(path, msg),
        other => other,
    })
}

pub fn write_newick(tree: &PhyloTree) -> String {
    fn rec(tree: &PhyloTree, node: usize, out: &mut String) {
        if !tree.children[node].is_empty() {
            out.push('(');
            for (i, &c) in tree.children[node].iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                rec(tree, c, out);
            }
            out.push(')');
        }
        if let Some(n) = &tree.name[node] {
            out.push_str(n);
        }
        if tree.parent[node].is_some() {
            out.push(':');
            out.push_str(&format!("{}", tree.branch_length[node]));
        }
    }
    let mut out = String::new();
    rec(tree, tree.root, &mut out);
    out.push(';');
    out
}
