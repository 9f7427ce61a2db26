//! Back-off tree of Pitman-Yor restaurants keyed by context suffixes.
//!
//! The root holds the empty context. A node at depth `k` holds the context
//! made of the `k` most recent tokens, its child keyed by the next older
//! token. Each node's base distribution is its parent's predictive
//! distribution; the root's base is supplied by the caller.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::pyp::{PypParams, Restaurant};

pub const MAX_DEPTH: usize = 15;
const ROOT: usize = 0;

#[derive(Debug, Clone)]
struct Node {
    restaurant: Restaurant,
    children: BTreeMap<u32, usize>,
    parent: usize,
    token: u32,
    depth: usize,
}

#[derive(Debug, Clone)]
pub struct ContextTrie {
    nodes: Vec<Option<Node>>,
    free: Vec<usize>,
    max_depth: usize,
}

/// Equal when the stored contexts and seatings agree; arena layout is ignored.
impl PartialEq for ContextTrie {
    fn eq(&self, other: &Self) -> bool {
        if self.max_depth != other.max_depth || self.node_count() != other.node_count() {
            return false;
        }
        let mut mine = Vec::new();
        self.visit(|path, r| mine.push((path.to_vec(), r.clone())));
        let mut i = 0;
        let mut same = true;
        other.visit(|path, r| {
            if same {
                same = mine[i].0 == path && &mine[i].1 == r;
            }
            i += 1;
        });
        same
    }
}

impl ContextTrie {
    pub fn new(max_depth: usize) -> Self {
        assert!(max_depth <= MAX_DEPTH, "context depth {max_depth} exceeds {MAX_DEPTH}");
        ContextTrie {
            nodes: vec![Some(Node {
                restaurant: Restaurant::new(),
                children: BTreeMap::new(),
                parent: ROOT,
                token: 0,
                depth: 0,
            })],
            free: Vec::new(),
            max_depth,
        }
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    fn node(&self, id: usize) -> &Node {
        self.nodes[id].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: usize) -> &mut Node {
        self.nodes[id].as_mut().expect("live node")
    }

    pub fn root(&self) -> &Restaurant {
        &self.node(ROOT).restaurant
    }

    pub fn is_empty(&self) -> bool {
        self.root().is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    fn child(&self, id: usize, token: u32) -> Option<usize> {
        self.node(id).children.get(&token).copied()
    }

    fn child_or_insert(&mut self, id: usize, token: u32) -> usize {
        if let Some(c) = self.child(id, token) {
            return c;
        }
        let node = Node {
            restaurant: Restaurant::new(),
            children: BTreeMap::new(),
            parent: id,
            token,
            depth: self.node(id).depth + 1,
        };
        let new = match self.free.pop() {
            Some(slot) => {
                self.nodes[slot] = Some(node);
                slot
            }
            None => {
                self.nodes.push(Some(node));
                self.nodes.len() - 1
            }
        };
        self.node_mut(id).children.insert(token, new);
        new
    }

    fn depth_for(&self, ctx: &[u32]) -> usize {
        self.max_depth.min(ctx.len())
    }

    /// Predictive probability of `word` after `ctx` (most recent token last),
    /// following the longest stored suffix of the context.
    pub fn predictive(&self, params: &[PypParams], ctx: &[u32], word: u32, root_base: f64) -> f64 {
        let mut id = ROOT;
        let mut prob = self.node(ROOT).restaurant.predictive_prob(&params[0], word, root_base);
        for k in 1..=self.depth_for(ctx) {
            match self.child(id, ctx[ctx.len() - k]) {
                Some(c) => {
                    id = c;
                    prob = self.node(c).restaurant.predictive_prob(&params[k], word, prob);
                }
                None => break,
            }
        }
        prob
    }

    /// Adds a customer for `word` at the full-depth node of `ctx`; new tables
    /// send customers towards the root.
    pub fn insert<R: Rng + ?Sized>(
        &mut self,
        params: &[PypParams],
        ctx: &[u32],
        word: u32,
        root_base: f64,
        rng: &mut R,
    ) -> Result<()> {
        let depth = self.depth_for(ctx);
        let mut path = [ROOT; MAX_DEPTH + 1];
        for k in 1..=depth {
            path[k] = self.child_or_insert(path[k - 1], ctx[ctx.len() - k]);
        }
        let mut bases = [0.0; MAX_DEPTH + 1];
        bases[0] = root_base;
        for k in 1..=depth {
            bases[k] = self
                .node(path[k - 1])
                .restaurant
                .predictive_prob(&params[k - 1], word, bases[k - 1]);
        }
        for k in (0..=depth).rev() {
            let id = path[k];
            let opened = self
                .node_mut(id)
                .restaurant
                .add_customer(&params[k], word, bases[k], rng)?;
            if !opened {
                break;
            }
        }
        Ok(())
    }

    /// Removes a customer for `word` at the full-depth node of `ctx`; emptied
    /// tables remove customers towards the root and empty leaves are pruned.
    pub fn remove<R: Rng + ?Sized>(&mut self, ctx: &[u32], word: u32, rng: &mut R) -> Result<()> {
        let depth = self.depth_for(ctx);
        let mut path = [ROOT; MAX_DEPTH + 1];
        for k in 1..=depth {
            path[k] = self
                .child(path[k - 1], ctx[ctx.len() - k])
                .ok_or(Error::MissingNgram(word))?;
        }
        if self.node(path[depth]).restaurant.dish_customers(word) == 0 {
            return Err(Error::MissingNgram(word));
        }
        for k in (0..=depth).rev() {
            let emptied = self.node_mut(path[k]).restaurant.remove_customer(word, rng)?;
            if !emptied {
                break;
            }
        }
        for k in (1..=depth).rev() {
            let id = path[k];
            let n = self.node(id);
            if !n.restaurant.is_empty() || !n.children.is_empty() {
                break;
            }
            let (parent, token) = (n.parent, n.token);
            self.node_mut(parent).children.remove(&token);
            self.nodes[id] = None;
            self.free.push(id);
        }
        Ok(())
    }

    /// Restaurants at `depth`, in storage order.
    pub fn restaurants_at_depth(&self, depth: usize) -> impl Iterator<Item = &Restaurant> + '_ {
        self.nodes
            .iter()
            .flatten()
            .filter(move |n| n.depth == depth)
            .map(|n| &n.restaurant)
    }

    pub fn customers_at_depth(&self, depth: usize) -> u64 {
        self.restaurants_at_depth(depth)
            .map(|r| r.customers() as u64)
            .sum()
    }

    /// Restaurant stored for exactly `ctx` at full depth, if any.
    pub fn restaurant(&self, ctx: &[u32]) -> Option<&Restaurant> {
        let mut id = ROOT;
        for k in 1..=self.depth_for(ctx) {
            id = self.child(id, ctx[ctx.len() - k])?;
        }
        Some(&self.node(id).restaurant)
    }

    /// Depth-first walk (children in ascending token order). The path lists
    /// tokens from the root downwards, i.e. most recent context token first.
    pub fn visit<F: FnMut(&[u32], &Restaurant)>(&self, mut f: F) {
        let mut path = Vec::new();
        self.visit_from(ROOT, &mut path, &mut f);
    }

    fn visit_from<F: FnMut(&[u32], &Restaurant)>(&self, id: usize, path: &mut Vec<u32>, f: &mut F) {
        let n = self.node(id);
        f(path, &n.restaurant);
        for (&tok, &c) in &n.children {
            path.push(tok);
            self.visit_from(c, path, f);
            path.pop();
        }
    }

    /// Installs `restaurant` at the node for a root-first `path`.
    pub fn set_restaurant(&mut self, path: &[u32], restaurant: Restaurant) -> Result<()> {
        if path.len() > self.max_depth {
            return Err(invalid(format!(
                "trie path of length {} exceeds depth {}",
                path.len(),
                self.max_depth
            )));
        }
        let mut id = ROOT;
        for &tok in path {
            id = self.child_or_insert(id, tok);
        }
        self.node_mut(id).restaurant = restaurant;
        Ok(())
    }

    /// Checks seating consistency: every restaurant is internally valid, each
    /// parent seats at least as many customers of a dish as its children have
    /// tables for it, and no empty leaf survives below the root.
    pub fn audit(&self) -> std::result::Result<(), String> {
        for (id, n) in self.nodes.iter().enumerate() {
            let Some(n) = n else { continue };
            n.restaurant.check().map_err(|e| format!("node {id}: {e}"))?;
            if id != ROOT && n.restaurant.is_empty() && n.children.is_empty() {
                return Err(format!("node {id} is an empty leaf"));
            }
            let mut child_tables: BTreeMap<u32, u32> = BTreeMap::new();
            for &c in n.children.values() {
                let child = self.node(c);
                if child.parent != id || child.depth != n.depth + 1 {
                    return Err(format!("node {c} has a broken parent link"));
                }
                for (dish, sizes) in child.restaurant.dishes() {
                    *child_tables.entry(dish).or_insert(0) += sizes.len() as u32;
                }
            }
            for (dish, tables) in child_tables {
                if n.restaurant.dish_customers(dish) < tables {
                    return Err(format!(
                        "node {id}: dish {dish} has {} customers but children hold {tables} tables",
                        n.restaurant.dish_customers(dish)
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn insert_cascades_and_remove_prunes() {
        let params = vec![PypParams::default(); 3];
        let mut rng = seeded(1, 0);
        let mut t = ContextTrie::new(2);
        t.insert(&params, &[4, 5], 6, 0.1, &mut rng).unwrap();
        for d in 0..=2 {
            assert_eq!(t.customers_at_depth(d), 1);
        }
        assert_eq!(t.node_count(), 3);
        t.audit().unwrap();
        t.remove(&[4, 5], 6, &mut rng).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.node_count(), 1);
    }

    #[test]
    fn remove_unknown_is_an_error() {
        let params = vec![PypParams::default(); 2];
        let mut rng = seeded(1, 0);
        let mut t = ContextTrie::new(1);
        assert!(matches!(t.remove(&[3], 4, &mut rng), Err(Error::MissingNgram(4))));
        t.insert(&params, &[3], 4, 0.2, &mut rng).unwrap();
        assert!(t.remove(&[3], 5, &mut rng).is_err());
        assert!(t.remove(&[7], 4, &mut rng).is_err());
    }

    #[test]
    fn unseen_context_uses_longest_suffix() {
        let params = vec![PypParams::default(); 3];
        let mut rng = seeded(1, 0);
        let mut t = ContextTrie::new(2);
        t.insert(&params, &[4, 5], 6, 0.1, &mut rng).unwrap();
        // [9, 5] shares the depth-1 node for 5 but not the depth-2 node
        let via_suffix = t.predictive(&params, &[9, 5], 6, 0.1);
        let depth1_only = {
            let root = t.root().predictive_prob(&params[0], 6, 0.1);
            t.restaurant(&[5]).unwrap().predictive_prob(&params[1], 6, root)
        };
        assert_eq!(via_suffix, depth1_only);
    }
}
