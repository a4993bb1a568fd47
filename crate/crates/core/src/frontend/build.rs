//! Lowering of parsed methods into SSA-style dependence graphs.

use std::collections::HashMap;

use super::parse::{Catch, Expr, LitKind, Method, Stmt};
use super::FrontendError;
use crate::pdg::{Edge, EdgeLabel, Node, Pdg};

#[derive(Clone)]
struct Binding {
    ty: Option<String>,
    node: Option<usize>,
}

/// A value produced by an expression, and whether this expression created it.
#[derive(Clone, Copy)]
struct Value {
    node: usize,
    fresh: bool,
}

pub(super) struct Builder {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    scopes: Vec<HashMap<String, Binding>>,
    fields: HashMap<String, usize>,
    control: Vec<usize>,
    try_calls: Vec<Vec<usize>>,
}

fn is_class_name(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
        && s.chars().any(char::is_lowercase)
}

impl Builder {
    pub(super) fn new() -> Self {
        Builder {
            nodes: Vec::new(),
            edges: Vec::new(),
            scopes: vec![HashMap::new()],
            fields: HashMap::new(),
            control: Vec::new(),
            try_calls: Vec::new(),
        }
    }

    pub(super) fn build(mut self, m: &Method) -> Result<Pdg, FrontendError> {
        for (ty, name) in &m.params {
            let n = self.data(Some(ty.clone()), None);
            self.bind_new(name, Some(ty.clone()), Some(n));
        }
        self.stmts(&m.body)?;
        Ok(Pdg {
            nodes: self.nodes,
            edges: self.edges,
            origin: None,
        })
    }

    fn id(i: usize) -> String {
        format!("n{i}")
    }

    fn data(&mut self, ty: Option<String>, value: Option<String>) -> usize {
        let i = self.nodes.len();
        let mut n = Node::data(Self::id(i));
        n.data_type = ty;
        n.data_value = value;
        self.nodes.push(n);
        i
    }

    /// Adds an action node and its control dependence on the innermost
    /// enclosing branch, loop or catch.
    fn action(&mut self, label: &str) -> usize {
        let i = self.nodes.len();
        self.nodes.push(Node::action(Self::id(i), label));
        if let Some(&c) = self.control.last() {
            self.edge(c, i, EdgeLabel::Dep);
        }
        i
    }

    fn edge(&mut self, src: usize, dst: usize, label: EdgeLabel) {
        let e = Edge::new(Self::id(src), Self::id(dst), label);
        if !self.edges.contains(&e) {
            self.edges.push(e);
        }
    }

    fn lookup(&self, name: &str) -> Option<&Binding> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn lookup_mut(&mut self, name: &str) -> Option<&mut Binding> {
        self.scopes.iter_mut().rev().find_map(|s| s.get_mut(name))
    }

    fn bind_new(&mut self, name: &str, ty: Option<String>, node: Option<usize>) {
        self.scopes
            .last_mut()
            .expect("scope stack is never empty")
            .insert(name.to_string(), Binding { ty, node });
    }

    fn scoped<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, FrontendError>) -> Result<T, FrontendError> {
        self.scopes.push(HashMap::new());
        let r = f(self);
        self.scopes.pop();
        r
    }

    fn controlled<T>(
        &mut self,
        ctrl: usize,
        f: impl FnOnce(&mut Self) -> Result<T, FrontendError>,
    ) -> Result<T, FrontendError> {
        self.control.push(ctrl);
        let r = self.scoped(f);
        self.control.pop();
        r
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<(), FrontendError> {
        body.iter().try_for_each(|s| self.stmt(s))
    }

    fn assign(&mut self, name: &str, v: Value, declared: Option<String>) {
        if v.fresh && self.nodes[v.node].data_type.is_none() {
            self.nodes[v.node].data_type = declared.clone();
        }
        match self.lookup_mut(name) {
            Some(b) if declared.is_none() => b.node = Some(v.node),
            _ => self.bind_new(name, declared, Some(v.node)),
        }
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), FrontendError> {
        match s {
            Stmt::Decl { ty, name, init, .. } => match init {
                Some(e) => {
                    let v = self.expr(e)?;
                    self.assign(name, v, Some(ty.clone()));
                }
                None => self.bind_new(name, Some(ty.clone()), None),
            },
            Stmt::Assign { name, value, line } => {
                let Some(b) = self.lookup(name) else {
                    return Err(FrontendError::Unsupported {
                        line: *line,
                        construct: format!("field writes (`{name}` is not a local)"),
                    });
                };
                let ty = b.ty.clone();
                let v = self.expr(value)?;
                if v.fresh && self.nodes[v.node].data_type.is_none() {
                    self.nodes[v.node].data_type = ty;
                }
                self.lookup_mut(name).expect("checked above").node = Some(v.node);
            }
            Stmt::Expr(e, _) => {
                self.effect(e)?;
            }
            Stmt::If { cond, then, els, .. } => {
                let g = self.expr(cond)?;
                let ctrl = self.action("IF");
                self.edge(g.node, ctrl, EdgeLabel::Cond);
                self.controlled(ctrl, |b| b.stmts(then))?;
                if let Some(els) = els {
                    self.controlled(ctrl, |b| b.stmts(els))?;
                }
            }
            Stmt::While { cond, body, .. } => {
                let g = self.expr(cond)?;
                let ctrl = self.action("LOOP");
                self.edge(g.node, ctrl, EdgeLabel::Cond);
                self.controlled(ctrl, |b| b.stmts(body))?;
            }
            Stmt::DoWhile { body, cond, .. } => {
                let ctrl = self.action("LOOP");
                let g = self.controlled(ctrl, |b| {
                    b.stmts(body)?;
                    b.expr(cond)
                })?;
                self.edge(g.node, ctrl, EdgeLabel::Cond);
            }
            Stmt::For {
                init,
                cond,
                update,
                body,
                ..
            } => {
                self.scoped(|b| {
                    b.stmts(init)?;
                    let g = match cond {
                        Some(c) => b.expr(c)?,
                        None => b.literal(&LitKind::Bool, "true"),
                    };
                    let ctrl = b.action("LOOP");
                    b.edge(g.node, ctrl, EdgeLabel::Cond);
                    b.controlled(ctrl, |b| {
                        b.stmts(body)?;
                        b.stmts(update)
                    })
                })?;
            }
            Stmt::Return(value, _) => {
                let v = value.as_ref().map(|e| self.expr(e)).transpose()?;
                let r = self.action("return");
                if let Some(v) = v {
                    self.edge(v.node, r, EdgeLabel::Para(0));
                }
            }
            Stmt::Throw(value, _) => {
                let v = self.expr(value)?;
                let r = self.action("throw");
                self.edge(v.node, r, EdgeLabel::Para(0));
            }
            Stmt::Try {
                body,
                catches,
                finally,
            } => {
                self.try_calls.push(Vec::new());
                let r = self.scoped(|b| b.stmts(body));
                let calls = self.try_calls.pop().expect("pushed above");
                r?;
                for c in catches {
                    self.catch(c, &calls)?;
                }
                if let Some(f) = finally {
                    self.scoped(|b| b.stmts(f))?;
                }
            }
            Stmt::Block(body) => self.scoped(|b| b.stmts(body))?,
            Stmt::Jump => {}
        }
        Ok(())
    }

    fn catch(&mut self, c: &Catch, calls: &[usize]) -> Result<(), FrontendError> {
        let node = self.action("CATCH");
        for &call in calls {
            self.edge(call, node, EdgeLabel::Throw);
        }
        let ex = self.data(Some(c.ty.clone()), None);
        self.edge(node, ex, EdgeLabel::Def);
        self.controlled(node, |b| {
            b.bind_new(&c.name, Some(c.ty.clone()), Some(ex));
            b.stmts(&c.body)
        })
    }

    /// Evaluates an expression whose value is discarded.
    fn effect(&mut self, e: &Expr) -> Result<(), FrontendError> {
        match e {
            Expr::Call { target, name, args } => {
                self.call(target.as_deref(), name, args, false)?;
            }
            Expr::New { ty, args } => {
                self.construct(ty, args, false)?;
            }
            other => {
                self.expr(other)?;
            }
        }
        Ok(())
    }

    fn literal(&mut self, kind: &LitKind, text: &str) -> Value {
        let ty = match kind {
            LitKind::Int => Some("int"),
            LitKind::Float => Some("double"),
            LitKind::Str => Some("String"),
            LitKind::Char => Some("char"),
            LitKind::Bool => Some("boolean"),
            LitKind::Null => None,
        };
        let node = self.data(ty.map(String::from), Some(text.to_string()));
        Value { node, fresh: true }
    }

    fn field(&mut self, path: String) -> Value {
        if let Some(&node) = self.fields.get(&path) {
            return Value { node, fresh: false };
        }
        let node = self.data(None, None);
        self.fields.insert(path, node);
        Value { node, fresh: false }
    }

    fn path_of(e: &Expr) -> Option<String> {
        match e {
            Expr::Name(n) => Some(n.clone()),
            Expr::This => Some("this".into()),
            Expr::Field(obj, f) => Self::path_of(obj).map(|p| format!("{p}.{f}")),
            _ => None,
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<Value, FrontendError> {
        Ok(match e {
            Expr::Lit(kind, text) => self.literal(kind, text),
            Expr::Name(n) => match self.lookup(n).cloned() {
                Some(Binding { node: Some(node), .. }) => Value { node, fresh: false },
                Some(Binding { ty, node: None }) => {
                    let node = self.data(ty, None);
                    self.lookup_mut(n).expect("just looked up").node = Some(node);
                    Value { node, fresh: false }
                }
                None => self.field(n.clone()),
            },
            Expr::This => self.field("this".into()),
            Expr::Field(obj, f) => {
                let path = Self::path_of(obj).ok_or_else(|| FrontendError::Unsupported {
                    line: 0,
                    construct: format!("field read `.{f}` on a computed value"),
                })?;
                self.field(format!("{path}.{f}"))
            }
            Expr::Call { target, name, args } => {
                let (_, v) = self.call(target.as_deref(), name, args, true)?;
                v.expect("result requested")
            }
            Expr::New { ty, args } => self.construct(ty, args, true)?.expect("result requested"),
            Expr::Unary(op, inner) => {
                let v = self.expr(inner)?;
                let a = self.action(op);
                self.edge(v.node, a, EdgeLabel::Para(0));
                let ty = (*op == "!").then(|| "boolean".to_string());
                let r = self.data(ty, None);
                self.edge(a, r, EdgeLabel::Def);
                Value { node: r, fresh: true }
            }
            Expr::Binary(op, l, r) => {
                let lv = self.expr(l)?;
                let rv = self.expr(r)?;
                let a = self.action(op);
                self.edge(lv.node, a, EdgeLabel::Para(0));
                self.edge(rv.node, a, EdgeLabel::Para(1));
                let boolean = matches!(*op, "==" | "!=" | "<" | "<=" | ">" | ">=" | "&&" | "||");
                let res = self.data(boolean.then(|| "boolean".to_string()), None);
                self.edge(a, res, EdgeLabel::Def);
                Value { node: res, fresh: true }
            }
        })
    }

    fn call(
        &mut self,
        target: Option<&Expr>,
        name: &str,
        args: &[Expr],
        want_result: bool,
    ) -> Result<(usize, Option<Value>), FrontendError> {
        let mut receiver = None;
        let mut declaring = None;
        match target {
            None | Some(Expr::This) => {}
            Some(Expr::Name(n)) if self.lookup(n).is_none() && is_class_name(n) => {
                declaring = Some(n.clone());
            }
            Some(t) => receiver = Some(self.expr(t)?),
        }
        let arg_values = args
            .iter()
            .map(|a| self.expr(a))
            .collect::<Result<Vec<_>, _>>()?;
        let a = self.action(name);
        self.nodes[a].num_para = Some(args.len() as u32);
        self.nodes[a].declaring_type = declaring;
        if let Some(r) = receiver {
            self.edge(r.node, a, EdgeLabel::Recv);
        }
        for (i, v) in arg_values.iter().enumerate() {
            self.edge(v.node, a, EdgeLabel::Para(i as u32));
        }
        if let Some(calls) = self.try_calls.last_mut() {
            calls.push(a);
        }
        let result = want_result.then(|| {
            let r = self.data(None, None);
            self.edge(a, r, EdgeLabel::Def);
            Value { node: r, fresh: true }
        });
        Ok((a, result))
    }

    fn construct(&mut self, ty: &str, args: &[Expr], want_result: bool) -> Result<Option<Value>, FrontendError> {
        let arg_values = args
            .iter()
            .map(|a| self.expr(a))
            .collect::<Result<Vec<_>, _>>()?;
        let a = self.action("<init>");
        self.nodes[a].num_para = Some(args.len() as u32);
        self.nodes[a].declaring_type = Some(ty.to_string());
        for (i, v) in arg_values.iter().enumerate() {
            self.edge(v.node, a, EdgeLabel::Para(i as u32));
        }
        if let Some(calls) = self.try_calls.last_mut() {
            calls.push(a);
        }
        Ok(want_result.then(|| {
            let r = self.data(Some(ty.to_string()), None);
            self.edge(a, r, EdgeLabel::Def);
            Value { node: r, fresh: true }
        }))
    }
}
