//! Prefix trie over a [`CodeBook`] for validity checks, constrained decoding
//! and code-to-entity resolution.
//!
//! Nodes live in one arena. A node's children are a sorted `(value, node)`
//! list until its fan-out exceeds [`DENSE_THRESHOLD`], after which they become
//! a dense array indexed by token value.

use crate::codebook::CodeBook;
use crate::error::{Error, Result};
use crate::tokenizer::TokenValue;

pub const DENSE_THRESHOLD: usize = 64;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
enum Children {
    Sparse(Vec<(TokenValue, u32)>),
    Dense { slots: Vec<u32>, len: usize },
}

impl Children {
    fn get(&self, value: TokenValue) -> Option<u32> {
        match self {
            Children::Sparse(list) => list
                .binary_search_by_key(&value, |&(v, _)| v)
                .ok()
                .map(|i| list[i].1),
            Children::Dense { slots, .. } => slots
                .get(value as usize)
                .copied()
                .filter(|&n| n != NONE),
        }
    }

    fn len(&self) -> usize {
        match self {
            Children::Sparse(list) => list.len(),
            Children::Dense { len, .. } => *len,
        }
    }

    fn keys(&self) -> Vec<TokenValue> {
        match self {
            Children::Sparse(list) => list.iter().map(|&(v, _)| v).collect(),
            Children::Dense { slots, .. } => slots
                .iter()
                .enumerate()
                .filter(|(_, &n)| n != NONE)
                .map(|(v, _)| v as TokenValue)
                .collect(),
        }
    }

    fn insert(&mut self, value: TokenValue, node: u32, alphabet: usize) {
        match self {
            Children::Sparse(list) => {
                let pos = list.partition_point(|&(v, _)| v < value);
                list.insert(pos, (value, node));
                if list.len() > DENSE_THRESHOLD {
                    let size = alphabet.max(list.last().map_or(0, |&(v, _)| v as usize + 1));
                    let mut slots = vec![NONE; size];
                    for &(v, n) in list.iter() {
                        slots[v as usize] = n;
                    }
                    *self = Children::Dense {
                        slots,
                        len: list.len(),
                    };
                }
            }
            Children::Dense { slots, len } => {
                if value as usize >= slots.len() {
                    slots.resize(value as usize + 1, NONE);
                }
                slots[value as usize] = node;
                *len += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    children: Children,
    terminal: Option<u32>,
}

impl Node {
    fn new() -> Self {
        Self {
            children: Children::Sparse(Vec::new()),
            terminal: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodeTrie {
    nodes: Vec<Node>,
    entity_ids: Vec<String>,
}

impl CodeTrie {
    pub fn build(book: &CodeBook) -> Result<Self> {
        Self::from_codes(
            book.entries().iter().map(|e| (e.entity_id.as_str(), e.code.values.as_slice())),
            book.vocab_size() as usize + 2,
        )
    }

    /// `alphabet` sizes dense child arrays; larger values still work.
    pub fn from_codes<'a, I>(codes: I, alphabet: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a [TokenValue])>,
    {
        let mut trie = Self {
            nodes: vec![Node::new()],
            entity_ids: Vec::new(),
        };
        for (entity_id, code) in codes {
            let mut node = 0usize;
            for &value in code {
                node = match trie.nodes[node].children.get(value) {
                    Some(child) => child as usize,
                    None => {
                        let child = trie.nodes.len() as u32;
                        trie.nodes.push(Node::new());
                        trie.nodes[node].children.insert(value, child, alphabet);
                        child as usize
                    }
                };
            }
            if trie.nodes[node].terminal.is_some() {
                return Err(Error::DuplicateCode {
                    entity_id: entity_id.to_string(),
                    code: code.to_vec(),
                });
            }
            trie.nodes[node].terminal = Some(trie.entity_ids.len() as u32);
            trie.entity_ids.push(entity_id.to_string());
        }
        Ok(trie)
    }

    fn walk(&self, prefix: &[TokenValue]) -> Option<usize> {
        let mut node = 0usize;
        for &value in prefix {
            node = self.nodes[node].children.get(value)? as usize;
        }
        Some(node)
    }

    /// Continuations of `prefix` that lead to at least one stored code, ascending.
    pub fn allowed_next(&self, prefix: &[TokenValue]) -> Vec<TokenValue> {
        self.walk(prefix)
            .map(|n| self.nodes[n].children.keys())
            .unwrap_or_default()
    }

    pub fn is_allowed(&self, prefix: &[TokenValue], next: TokenValue) -> bool {
        self.walk(prefix)
            .is_some_and(|n| self.nodes[n].children.get(next).is_some())
    }

    pub fn resolve(&self, code: &[TokenValue]) -> Option<&str> {
        let node = self.walk(code)?;
        self.nodes[node]
            .terminal
            .map(|t| self.entity_ids[t as usize].as_str())
    }

    pub fn contains(&self, code: &[TokenValue]) -> bool {
        self.resolve(code).is_some()
    }

    pub fn terminal_count(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn fan_out(&self, prefix: &[TokenValue]) -> usize {
        self.walk(prefix).map_or(0, |n| self.nodes[n].children.len())
    }
}
