//! Rooted trees with branch lengths, parsed from and written to Newick.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Length of the branch to the parent; 0 and unused for the root.
    pub branch_length: f64,
    /// Leaf label, or an optional internal-node label.
    pub label: Option<String>,
}

/// A rooted tree: node 0 is the root, children precede nothing in
/// particular, leaf labels are unique and non-empty.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].children.is_empty()
    }

    /// Leaf indices in parse order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn leaf_labels(&self) -> Vec<&str> {
        self.leaves()
            .into_iter()
            .map(|i| self.nodes[i].label.as_deref().expect("leaves are labeled"))
            .collect()
    }

    /// Children-before-parents order, root last.
    pub fn postorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend_from_slice(&self.nodes[i].children);
        }
        order.reverse();
        order
    }

    /// True for a root of degree three whose children are all leaves: the
    /// shape with an exact likelihood.
    pub fn is_three_leaf_star(&self) -> bool {
        let root_children = &self.nodes[self.root()].children;
        root_children.len() == 3 && root_children.iter().all(|&c| self.is_leaf(c))
    }

    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root(), &mut out);
        out.push(';');
        out
    }

    fn write_node(&self, i: usize, out: &mut String) {
        let node = &self.nodes[i];
        if !node.children.is_empty() {
            out.push('(');
            for (k, &c) in node.children.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                self.write_node(c, out);
                out.push(':');
                out.push_str(&format!("{}", self.nodes[c].branch_length));
            }
            out.push(')');
        }
        if let Some(label) = &node.label {
            out.push_str(label);
        }
    }
}

/// Parses a Newick string with mandatory branch lengths on every non-root
/// edge. Errors carry the byte offset of the offending character.
pub fn parse_newick(text: &str) -> Result<Tree> {
    let bytes = text.as_bytes();
    let mut parser = Parser {
        bytes,
        pos: 0,
        nodes: Vec::new(),
    };
    parser.skip_ws();
    let root = parser.node(None)?;
    debug_assert_eq!(root, 0);
    parser.skip_ws();
    if parser.peek() == Some(b';') {
        parser.pos += 1;
    } else {
        return Err(parser.err("expected ';' after tree"));
    }
    parser.skip_ws();
    if parser.pos != bytes.len() {
        return Err(parser.err("trailing content after ';'"));
    }

    let tree = Tree {
        nodes: parser.nodes,
    };
    let mut seen = std::collections::HashSet::new();
    for &leaf in &tree.leaves() {
        match &tree.nodes[leaf].label {
            None => {
                return Err(Error::parse(0, "leaf without a label"));
            }
            Some(l) => {
                if !seen.insert(l.clone()) {
                    return Err(Error::parse(0, format!("duplicate leaf label {l:?}")));
                }
            }
        }
    }
    Ok(tree)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    nodes: Vec<Node>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, message: &str) -> Error {
        Error::parse(self.pos, message)
    }

    /// Parses one node (subtree or leaf); branch length handled by the caller
    /// for non-root nodes.
    fn node(&mut self, parent: Option<usize>) -> Result<usize> {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            parent,
            children: Vec::new(),
            branch_length: 0.0,
            label: None,
        });
        self.skip_ws();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                let child = self.node(Some(idx))?;
                self.nodes[idx].children.push(child);
                self.skip_ws();
                match self.peek() {
                    Some(b':') => {
                        self.pos += 1;
                        let len = self.number()?;
                        if !(len.is_finite() && len >= 0.0) {
                            return Err(self.err("branch length must be finite and nonnegative"));
                        }
                        self.nodes[child].branch_length = len;
                    }
                    _ => return Err(self.err("expected ':' and a branch length")),
                }
                self.skip_ws();
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                    }
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or ')'")),
                }
            }
            self.skip_ws();
            // Optional internal label.
            if matches!(self.peek(), Some(c) if is_label_byte(c)) {
                self.nodes[idx].label = Some(self.label()?);
            }
        } else {
            let label = self.label()?;
            self.nodes[idx].label = Some(label);
        }
        Ok(idx)
    }

    fn label(&mut self) -> Result<String> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if is_label_byte(c)) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a label"));
        }
        Ok(std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.err("label is not valid UTF-8"))?
            .to_string())
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while matches!(
            self.peek(),
            Some(c) if c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E')
        ) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::parse(start, "invalid number"))
    }
}

fn is_label_byte(c: u8) -> bool {
    !matches!(c, b'(' | b')' | b',' | b':' | b';') && !c.is_ascii_whitespace()
}
