//! Lexer and recursive-descent parser for the `.mj` method language.

use super::FrontendError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(String),
    Float(String),
    Str(String),
    Char(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
}

const SYMBOLS: &[&str] = &[
    "->", "::", "++", "--", "+=", "-=", "*=", "/=", "==", "!=", "<=", ">=", "&&", "||", "(", ")",
    "{", "}", "[", "]", ";", ",", ".", "=", "<", ">", "!", "+", "-", "*", "/", "%", "?", ":", "@",
    "&", "|", "^", "~",
];

fn lex(src: &str) -> Result<Vec<Token>, FrontendError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                if chars[i] == '\n' {
                    line += 1;
                }
                i += 1;
            }
            if i >= chars.len() {
                return Err(FrontendError::Parse {
                    line,
                    message: "unterminated block comment".into(),
                });
            }
            i += 2;
            continue;
        }
        if c.is_alphabetic() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut float = false;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '_') {
                if chars[i] == '.' {
                    if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                        break;
                    }
                    float = true;
                }
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let lower = text.to_ascii_lowercase();
            let is_float = float || (!lower.starts_with("0x") && (lower.ends_with('f') || lower.ends_with('d')));
            out.push(Token {
                tok: if is_float { Tok::Float(text) } else { Tok::Int(text) },
                line,
            });
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let mut text = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(FrontendError::Parse {
                            line,
                            message: "unterminated literal".into(),
                        })
                    }
                    Some('\\') => {
                        if let Some(&n) = chars.get(i + 1) {
                            text.push(match n {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                        }
                        i += 2;
                    }
                    Some(&ch) if ch == quote => {
                        i += 1;
                        break;
                    }
                    Some(&ch) => {
                        text.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Token {
                tok: if quote == '"' { Tok::Str(text) } else { Tok::Char(text) },
                line,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                out.push(Token { tok: Tok::Sym(s), line });
                i += s.len();
            }
            None => {
                return Err(FrontendError::Parse {
                    line,
                    message: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LitKind {
    Int,
    Float,
    Str,
    Char,
    Bool,
    Null,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(LitKind, String),
    Name(String),
    This,
    Field(Box<Expr>, String),
    Call {
        target: Option<Box<Expr>>,
        name: String,
        args: Vec<Expr>,
    },
    New {
        ty: String,
        args: Vec<Expr>,
    },
    Unary(&'static str, Box<Expr>),
    Binary(&'static str, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Decl {
        ty: String,
        name: String,
        init: Option<Expr>,
        line: u32,
    },
    Assign {
        name: String,
        value: Expr,
        line: u32,
    },
    Expr(Expr, u32),
    If {
        cond: Expr,
        then: Vec<Stmt>,
        els: Option<Vec<Stmt>>,
        line: u32,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
        line: u32,
    },
    DoWhile {
        body: Vec<Stmt>,
        cond: Expr,
        line: u32,
    },
    For {
        init: Vec<Stmt>,
        cond: Option<Expr>,
        update: Vec<Stmt>,
        body: Vec<Stmt>,
        line: u32,
    },
    Return(Option<Expr>, u32),
    Throw(Expr, u32),
    Try {
        body: Vec<Stmt>,
        catches: Vec<Catch>,
        finally: Option<Vec<Stmt>>,
    },
    Block(Vec<Stmt>),
    Jump,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catch {
    pub ty: String,
    pub name: String,
    pub body: Vec<Stmt>,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: Option<String>,
    pub params: Vec<(String, String)>,
    pub body: Vec<Stmt>,
    pub line: u32,
}

const MODIFIERS: &[&str] = &[
    "public", "private", "protected", "static", "final", "synchronized", "abstract", "native",
];

const KEYWORDS: &[&str] = &[
    "if", "else", "while", "do", "for", "return", "try", "catch", "finally", "throw", "new",
    "break", "continue", "this", "true", "false", "null", "switch", "case",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

pub fn parse_method(src: &str) -> Result<Method, FrontendError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
    };
    let method = p.method()?;
    if p.peek() != &Tok::Eof {
        return Err(p.error("trailing input after method body"));
    }
    Ok(method)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn line(&self) -> u32 {
        self.toks[self.pos].line
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> FrontendError {
        FrontendError::Parse {
            line: self.line(),
            message: message.into(),
        }
    }

    fn unsupported(&self, construct: &str) -> FrontendError {
        FrontendError::Unsupported {
            line: self.line(),
            construct: construct.to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), FrontendError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{s}`, found {}", describe(self.peek()))))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<(), FrontendError> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected `{k}`, found {}", describe(self.peek()))))
        }
    }

    fn ident(&mut self) -> Result<String, FrontendError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.error(format!("expected identifier, found {}", describe(&other)))),
        }
    }

    /// Length in tokens of a type starting at offset `k`, if one is there.
    /// Generic arguments are reported as unsupported by the caller.
    fn type_len_at(&self, k: usize) -> Option<usize> {
        let mut n = k;
        match self.peek_at(n) {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => n += 1,
            _ => return None,
        }
        while matches!(self.peek_at(n), Tok::Sym(".")) && matches!(self.peek_at(n + 1), Tok::Ident(_)) {
            n += 2;
        }
        while matches!(self.peek_at(n), Tok::Sym("[")) && matches!(self.peek_at(n + 1), Tok::Sym("]")) {
            n += 2;
        }
        Some(n - k)
    }

    fn ty(&mut self) -> Result<String, FrontendError> {
        let mut s = self.ident()?;
        while self.is_sym(".") && matches!(self.peek_at(1), Tok::Ident(_)) {
            self.bump();
            s.push('.');
            s.push_str(&self.ident()?);
        }
        if self.is_sym("<") {
            return Err(self.unsupported("generic type arguments"));
        }
        while self.is_sym("[") && matches!(self.peek_at(1), Tok::Sym("]")) {
            self.bump();
            self.bump();
            s.push_str("[]");
        }
        Ok(s)
    }

    fn method(&mut self) -> Result<Method, FrontendError> {
        let line = self.line();
        if self.is_sym("@") {
            return Err(self.unsupported("annotations"));
        }
        let mut k = 0;
        while matches!(self.peek_at(k), Tok::Ident(s) if MODIFIERS.contains(&s.as_str())) {
            k += 1;
        }
        let header = match self.type_len_at(k) {
            Some(tl) => {
                matches!(self.peek_at(k + tl), Tok::Ident(_))
                    && matches!(self.peek_at(k + tl + 1), Tok::Sym("("))
            }
            None => false,
        };
        if !header {
            let mut body = Vec::new();
            while self.peek() != &Tok::Eof {
                body.push(self.stmt()?);
            }
            return Ok(Method {
                name: None,
                params: Vec::new(),
                body,
                line,
            });
        }
        for _ in 0..k {
            self.bump();
        }
        self.ty()?;
        let name = self.ident()?;
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.is_sym(")") {
            loop {
                while self.is_kw("final") {
                    self.bump();
                }
                let ty = self.ty()?;
                let pname = self.ident()?;
                params.push((ty, pname));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        if self.is_kw("throws") {
            self.bump();
            self.ty()?;
            while self.eat_sym(",") {
                self.ty()?;
            }
        }
        let body = self.block()?;
        Ok(Method {
            name: Some(name),
            params,
            body,
            line,
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, FrontendError> {
        self.expect_sym("{")?;
        let mut out = Vec::new();
        while !self.is_sym("}") {
            if self.peek() == &Tok::Eof {
                return Err(self.error("unexpected end of input inside block"));
            }
            out.push(self.stmt()?);
        }
        self.bump();
        Ok(out)
    }

    fn body(&mut self) -> Result<Vec<Stmt>, FrontendError> {
        if self.is_sym("{") {
            self.block()
        } else {
            Ok(vec![self.stmt()?])
        }
    }

    fn looks_like_decl(&self) -> Result<bool, FrontendError> {
        let Some(tl) = self.type_len_at(0) else {
            return Ok(false);
        };
        if matches!(self.peek_at(tl), Tok::Ident(_)) {
            return Ok(true);
        }
        if matches!(self.peek_at(tl), Tok::Sym("<")) {
            if let Tok::Ident(first) = self.peek() {
                if first.chars().next().is_some_and(char::is_uppercase) {
                    return Err(self.unsupported("generic type arguments"));
                }
            }
        }
        Ok(false)
    }

    fn stmt(&mut self) -> Result<Stmt, FrontendError> {
        let line = self.line();
        if self.is_sym("{") {
            return Ok(Stmt::Block(self.block()?));
        }
        if self.eat_sym(";") {
            return Ok(Stmt::Block(Vec::new()));
        }
        if let Tok::Ident(kw) = self.peek().clone() {
            match kw.as_str() {
                "if" => {
                    self.bump();
                    self.expect_sym("(")?;
                    let cond = self.expr()?;
                    self.expect_sym(")")?;
                    let then = self.body()?;
                    let els = if self.is_kw("else") {
                        self.bump();
                        Some(self.body()?)
                    } else {
                        None
                    };
                    return Ok(Stmt::If { cond, then, els, line });
                }
                "while" => {
                    self.bump();
                    self.expect_sym("(")?;
                    let cond = self.expr()?;
                    self.expect_sym(")")?;
                    let body = self.body()?;
                    return Ok(Stmt::While { cond, body, line });
                }
                "do" => {
                    self.bump();
                    let body = self.body()?;
                    self.expect_kw("while")?;
                    self.expect_sym("(")?;
                    let cond = self.expr()?;
                    self.expect_sym(")")?;
                    self.expect_sym(";")?;
                    return Ok(Stmt::DoWhile { body, cond, line });
                }
                "for" => return self.for_stmt(),
                "return" => {
                    self.bump();
                    let value = if self.is_sym(";") { None } else { Some(self.expr()?) };
                    self.expect_sym(";")?;
                    return Ok(Stmt::Return(value, line));
                }
                "throw" => {
                    self.bump();
                    let value = self.expr()?;
                    self.expect_sym(";")?;
                    return Ok(Stmt::Throw(value, line));
                }
                "break" | "continue" => {
                    self.bump();
                    self.expect_sym(";")?;
                    return Ok(Stmt::Jump);
                }
                "try" => return self.try_stmt(),
                "switch" => return Err(self.unsupported("switch statements")),
                "synchronized" => return Err(self.unsupported("synchronized blocks")),
                "final" => {
                    self.bump();
                    return self.stmt();
                }
                _ => {}
            }
        }
        let s = self.simple_stmt()?;
        self.expect_sym(";")?;
        Ok(s)
    }

    fn for_stmt(&mut self) -> Result<Stmt, FrontendError> {
        let line = self.line();
        self.bump();
        self.expect_sym("(")?;
        let mut init = Vec::new();
        if !self.is_sym(";") {
            init.push(self.simple_stmt()?);
            if self.is_sym(":") {
                return Err(self.unsupported("enhanced for loops"));
            }
            while self.eat_sym(",") {
                init.push(self.simple_stmt()?);
            }
        }
        self.expect_sym(";")?;
        let cond = if self.is_sym(";") { None } else { Some(self.expr()?) };
        self.expect_sym(";")?;
        let mut update = Vec::new();
        if !self.is_sym(")") {
            update.push(self.simple_stmt()?);
            while self.eat_sym(",") {
                update.push(self.simple_stmt()?);
            }
        }
        self.expect_sym(")")?;
        let body = self.body()?;
        Ok(Stmt::For {
            init,
            cond,
            update,
            body,
            line,
        })
    }

    fn try_stmt(&mut self) -> Result<Stmt, FrontendError> {
        self.bump();
        if self.is_sym("(") {
            return Err(self.unsupported("try-with-resources"));
        }
        let body = self.block()?;
        let mut catches = Vec::new();
        while self.is_kw("catch") {
            let line = self.line();
            self.bump();
            self.expect_sym("(")?;
            while self.is_kw("final") {
                self.bump();
            }
            let mut ty = self.ty()?;
            while self.eat_sym("|") {
                ty.push('|');
                ty.push_str(&self.ty()?);
            }
            let name = self.ident()?;
            self.expect_sym(")")?;
            let cbody = self.block()?;
            catches.push(Catch {
                ty,
                name,
                body: cbody,
                line,
            });
        }
        let finally = if self.is_kw("finally") {
            self.bump();
            Some(self.block()?)
        } else {
            None
        };
        if catches.is_empty() && finally.is_none() {
            return Err(self.error("try without catch or finally"));
        }
        Ok(Stmt::Try {
            body,
            catches,
            finally,
        })
    }

    /// Declaration, assignment or expression, without the trailing `;`.
    fn simple_stmt(&mut self) -> Result<Stmt, FrontendError> {
        let line = self.line();
        if self.looks_like_decl()? {
            let ty = self.ty()?;
            let name = self.ident()?;
            let init = if self.eat_sym("=") { Some(self.expr()?) } else { None };
            if self.is_sym(",") {
                return Err(self.unsupported("multiple declarators"));
            }
            return Ok(Stmt::Decl { ty, name, init, line });
        }
        let target = self.expr()?;
        let compound = match self.peek() {
            Tok::Sym(s @ ("=" | "+=" | "-=" | "*=" | "/=" | "++" | "--")) => Some(*s),
            _ => None,
        };
        let Some(op) = compound else {
            return Ok(Stmt::Expr(target, line));
        };
        let name = match target {
            Expr::Name(n) => n,
            Expr::Field(..) => return Err(self.unsupported("field writes")),
            _ => return Err(self.error("left-hand side is not assignable")),
        };
        self.bump();
        let value = match op {
            "=" => self.expr()?,
            "++" => Expr::Binary("+", Box::new(Expr::Name(name.clone())), Box::new(Expr::Lit(LitKind::Int, "1".into()))),
            "--" => Expr::Binary("-", Box::new(Expr::Name(name.clone())), Box::new(Expr::Lit(LitKind::Int, "1".into()))),
            _ => {
                let bin: &'static str = match op {
                    "+=" => "+",
                    "-=" => "-",
                    "*=" => "*",
                    _ => "/",
                };
                let rhs = self.expr()?;
                Expr::Binary(bin, Box::new(Expr::Name(name.clone())), Box::new(rhs))
            }
        };
        Ok(Stmt::Assign { name, value, line })
    }

    pub fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, FrontendError> {
        const LEVELS: &[&[&str]] = &[
            &["||"],
            &["&&"],
            &["|"],
            &["^"],
            &["&"],
            &["==", "!="],
            &["<", "<=", ">", ">="],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let op = match self.peek() {
                Tok::Sym(s) if LEVELS[level].contains(s) => *s,
                _ => break,
            };
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        if self.is_sym("?") {
            return Err(self.unsupported("conditional expressions"));
        }
        if self.is_sym("->") {
            return Err(self.unsupported("lambda expressions"));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, FrontendError> {
        if self.eat_sym("!") {
            return Ok(Expr::Unary("!", Box::new(self.unary()?)));
        }
        if self.eat_sym("-") {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Lit(k @ (LitKind::Int | LitKind::Float), v) => Expr::Lit(k, format!("-{v}")),
                other => Expr::Unary("-", Box::new(other)),
            });
        }
        if self.is_sym("~") {
            return Err(self.unsupported("bitwise complement"));
        }
        self.postfix()
    }

    fn args(&mut self) -> Result<Vec<Expr>, FrontendError> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if !self.is_sym(")") {
            loop {
                out.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn postfix(&mut self) -> Result<Expr, FrontendError> {
        let mut e = self.primary()?;
        loop {
            if self.eat_sym(".") {
                if self.is_sym("<") {
                    return Err(self.unsupported("generic method calls"));
                }
                let name = self.ident()?;
                if self.is_sym("(") {
                    let args = self.args()?;
                    e = Expr::Call {
                        target: Some(Box::new(e)),
                        name,
                        args,
                    };
                } else {
                    e = Expr::Field(Box::new(e), name);
                }
            } else if self.is_sym("[") {
                return Err(self.unsupported("array access"));
            } else if self.is_sym("::") {
                return Err(self.unsupported("method references"));
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Lit(LitKind::Int, v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Lit(LitKind::Float, v))
            }
            Tok::Str(v) => {
                self.bump();
                Ok(Expr::Lit(LitKind::Str, v))
            }
            Tok::Char(v) => {
                self.bump();
                Ok(Expr::Lit(LitKind::Char, v))
            }
            Tok::Sym("(") => {
                if matches!(self.peek_at(1), Tok::Ident(_)) && matches!(self.peek_at(2), Tok::Sym(")"))
                    && matches!(self.peek_at(3), Tok::Ident(_) | Tok::Sym("("))
                {
                    return Err(self.unsupported("casts"));
                }
                self.bump();
                if self.is_sym(")") {
                    return Err(self.unsupported("lambda expressions"));
                }
                let e = self.expr()?;
                self.expect_sym(")")?;
                if self.is_sym("->") {
                    return Err(self.unsupported("lambda expressions"));
                }
                Ok(e)
            }
            Tok::Ident(id) => match id.as_str() {
                "true" | "false" => {
                    self.bump();
                    Ok(Expr::Lit(LitKind::Bool, id))
                }
                "null" => {
                    self.bump();
                    Ok(Expr::Lit(LitKind::Null, id))
                }
                "this" => {
                    self.bump();
                    Ok(Expr::This)
                }
                "new" => {
                    self.bump();
                    let ty = self.ty()?;
                    if self.is_sym("[") {
                        return Err(self.unsupported("array creation"));
                    }
                    let args = self.args()?;
                    if self.is_sym("{") {
                        return Err(self.unsupported("anonymous classes"));
                    }
                    Ok(Expr::New { ty, args })
                }
                _ if KEYWORDS.contains(&id.as_str()) => {
                    Err(self.error(format!("unexpected keyword `{id}`")))
                }
                _ => {
                    self.bump();
                    if self.is_sym("->") {
                        return Err(self.unsupported("lambda expressions"));
                    }
                    if self.is_sym("(") {
                        let args = self.args()?;
                        Ok(Expr::Call {
                            target: None,
                            name: id,
                            args,
                        })
                    } else {
                        Ok(Expr::Name(id))
                    }
                }
            },
            other => Err(self.error(format!("expected expression, found {}", describe(&other)))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(s) | Tok::Float(s) => format!("number `{s}`"),
        Tok::Str(_) => "string literal".into(),
        Tok::Char(_) => "char literal".into(),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}
