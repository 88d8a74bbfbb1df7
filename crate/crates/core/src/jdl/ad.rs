use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::ast::Expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Job,
    Resource,
}

/// A classified advertisement: an ordered attribute map whose values are expressions.
///
/// Lookup ignores ASCII case. Re-assigning an attribute replaces its value but
/// keeps the spelling it was first written with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ad {
    attrs: Vec<(String, Expr)>,
    role: Option<Role>,
}

impl Ad {
    pub fn new() -> Ad {
        Ad::default()
    }

    pub fn with_role(mut self, role: Role) -> Ad {
        self.role = Some(role);
        self
    }

    pub fn role(&self) -> Option<Role> {
        self.role
    }

    pub fn set_role(&mut self, role: Role) {
        self.role = Some(role);
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Expr) {
        let name = name.into();
        match self.attrs.iter_mut().find(|(n, _)| n.eq_ignore_ascii_case(&name)) {
            Some(slot) => slot.1 = value,
            None => self.attrs.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Expr> {
        self.attrs.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, e)| e)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn remove(&mut self, name: &str) -> Option<Expr> {
        let i = self.attrs.iter().position(|(n, _)| n.eq_ignore_ascii_case(name))?;
        Some(self.attrs.remove(i).1)
    }

    pub fn requirements(&self) -> Option<&Expr> {
        self.get("Requirements")
    }

    pub fn rank_expr(&self) -> Option<&Expr> {
        self.get("Rank")
    }

    /// Attributes in insertion order, with their canonical spelling.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.attrs.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    /// One `Name: <sexpr>` line per attribute; the golden-corpus format.
    pub fn sexpr(&self) -> AdSExpr<'_> {
        AdSExpr(self)
    }
}

impl fmt::Display for Ad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[\n")?;
        for (name, value) in &self.attrs {
            writeln!(f, "  {name} = {value};")?;
        }
        f.write_str("]")
    }
}

pub struct AdSExpr<'a>(&'a Ad);

impl fmt::Display for AdSExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in &self.0.attrs {
            writeln!(f, "{name}: {}", value.sexpr())?;
        }
        Ok(())
    }
}
