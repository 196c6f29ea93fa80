//! Python syntax-tree backend built on tree-sitter.

use tree_sitter::{Node, Parser};

use super::{function_id, normalize_code, CodeConfig, Extraction, FunctionUnit, SourceFile};
use crate::records::Warning;

/// Node kinds counted as branching constructs for cyclomatic complexity.
const BRANCH_KINDS: &[&str] = &[
    "if_statement",
    "elif_clause",
    "conditional_expression",
    "case_clause",
    "for_statement",
    "while_statement",
    "boolean_operator",
    "except_clause",
    "except_group_clause",
    "if_clause",
];

/// Kinds whose bodies are separate scopes and do not count toward the
/// enclosing function.
const SCOPE_KINDS: &[&str] = &["function_definition", "class_definition"];

pub struct PythonBackend {
    parser: Parser,
}

impl Default for PythonBackend {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Scope {
    Class,
    Function,
}

impl PythonBackend {
    pub fn new() -> Self {
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_python::LANGUAGE.into())
            .expect("bundled grammar is compatible");
        PythonBackend { parser }
    }

    pub fn extract(&mut self, project_id: &str, file: &SourceFile, cfg: &CodeConfig) -> Extraction {
        let mut out = Extraction::default();
        let Some(tree) = self.parser.parse(&file.content, None) else {
            out.warnings
                .push(Warning::new("extract", &file.file_path, "parser produced no tree"));
            return out;
        };
        let root = tree.root_node();
        if root.has_error() {
            let at = first_error(root)
                .map(|n| format!(" near line {}", n.start_position().row + 1))
                .unwrap_or_default();
            out.warnings.push(Warning::new(
                "extract",
                &file.file_path,
                format!("parse failure{at}; file skipped"),
            ));
            return out;
        }
        let src = file.content.as_bytes();
        let mut walker = Walker {
            project_id,
            file,
            src,
            cfg,
            scopes: Vec::new(),
            units: Vec::new(),
        };
        walker.visit(root);
        out.units = walker.units;
        out
    }
}

fn first_error(node: Node) -> Option<Node> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    let mut cursor = node.walk();
    let children: Vec<Node> = node.children(&mut cursor).collect();
    children.into_iter().find_map(first_error)
}

struct Walker<'a> {
    project_id: &'a str,
    file: &'a SourceFile,
    src: &'a [u8],
    cfg: &'a CodeConfig,
    scopes: Vec<(Scope, String)>,
    units: Vec<FunctionUnit>,
}

impl Walker<'_> {
    fn text(&self, n: Node) -> &str {
        n.utf8_text(self.src).unwrap_or("")
    }

    fn visit(&mut self, node: Node) {
        match node.kind() {
            "function_definition" => {
                let decorators = decorator_names(node, self.src);
                self.function(node, decorators);
            }
            "class_definition" => {
                let name = node
                    .child_by_field_name("name")
                    .map(|n| self.text(n).to_string())
                    .unwrap_or_default();
                self.scopes.push((Scope::Class, name));
                self.children(node);
                self.scopes.pop();
            }
            _ => self.children(node),
        }
    }

    fn children(&mut self, node: Node) {
        let mut cursor = node.walk();
        let kids: Vec<Node> = node.children(&mut cursor).collect();
        for k in kids {
            self.visit(k);
        }
    }

    fn function(&mut self, node: Node, decorator_names: Vec<String>) {
        let name = node
            .child_by_field_name("name")
            .map(|n| self.text(n).to_string())
            .unwrap_or_default();
        let is_method = matches!(self.scopes.last(), Some((Scope::Class, _)));
        let qualified_name = self
            .scopes
            .iter()
            .map(|(_, s)| s.as_str())
            .chain(std::iter::once(name.as_str()))
            .collect::<Vec<_>>()
            .join(".");
        let start_line = node.start_position().row + 1;
        let mut end_line = node.end_position().row + 1;
        if node.end_position().column == 0 && end_line > start_line {
            end_line -= 1;
        }
        let raw_body = self.file.slice_lines(start_line, end_line);
        let body = node.child_by_field_name("body");
        let docstring = body.and_then(|b| docstring(b, self.src));
        let doc_comment = docstring
            .as_ref()
            .map(|(_, s)| s.clone())
            .or_else(|| leading_comments(self.file, start_line));
        let statements = body
            .map(|b| count_statements(b, docstring.as_ref().map(|(id, _)| *id)))
            .unwrap_or(0);
        let cyclomatic = 1 + body.map(count_branches).unwrap_or(0);
        let normalized_body = normalize_code(&raw_body);
        self.units.push(FunctionUnit {
            function_id: function_id(self.project_id, &self.file.file_path, &qualified_name, start_line),
            project_id: self.project_id.to_string(),
            qualified_name,
            file_path: self.file.file_path.clone(),
            start_line,
            end_line,
            raw_body,
            normalized_body,
            doc_comment,
            decorator_names,
            is_method,
            statements,
            trivial: statements < self.cfg.min_statements,
            cyclomatic,
        });
        self.scopes.push((Scope::Function, name));
        if let Some(b) = body {
            self.children(b);
        }
        self.scopes.pop();
    }
}

fn decorator_names(def: Node, src: &[u8]) -> Vec<String> {
    let Some(parent) = def.parent().filter(|p| p.kind() == "decorated_definition") else {
        return Vec::new();
    };
    let mut cursor = parent.walk();
    parent
        .children(&mut cursor)
        .filter(|c| c.kind() == "decorator")
        .map(|d| {
            let t = d.utf8_text(src).unwrap_or("").trim_start_matches('@').trim();
            t.split('(').next().unwrap_or(t).trim().to_string()
        })
        .collect()
}

/// Docstring of a body block: the first statement if it is a bare string.
fn docstring(block: Node, src: &[u8]) -> Option<(usize, String)> {
    let mut cursor = block.walk();
    let first = block.named_children(&mut cursor).find(|c| c.kind() != "comment")?;
    if first.kind() != "expression_statement" || first.named_child_count() != 1 {
        return None;
    }
    let s = first.named_child(0)?;
    if s.kind() != "string" {
        return None;
    }
    let mut c2 = s.walk();
    let content: String = s
        .named_children(&mut c2)
        .filter(|c| c.kind() == "string_content")
        .map(|c| c.utf8_text(src).unwrap_or(""))
        .collect();
    Some((first.id(), content.trim().to_string()))
}

/// Contiguous `#` comment lines directly above the definition.
fn leading_comments(file: &SourceFile, start_line: usize) -> Option<String> {
    let lines: Vec<&str> = file.content.lines().collect();
    let mut collected = Vec::new();
    let mut i = start_line.saturating_sub(1);
    while i > 0 {
        let l = lines.get(i - 1)?.trim();
        if l.starts_with('@') {
            i -= 1;
            continue;
        }
        match l.strip_prefix('#') {
            Some(c) => collected.push(c.trim().to_string()),
            None => break,
        }
        i -= 1;
    }
    if collected.is_empty() {
        return None;
    }
    collected.reverse();
    Some(collected.join("\n"))
}

/// Statements anywhere in the body, excluding the docstring and comments.
fn count_statements(block: Node, docstring: Option<usize>) -> usize {
    let mut count = 0;
    let mut stack = vec![block];
    while let Some(n) = stack.pop() {
        let mut cursor = n.walk();
        for c in n.named_children(&mut cursor) {
            if n.kind() == "block" && c.kind() != "comment" && Some(c.id()) != docstring {
                count += 1;
            }
            stack.push(c);
        }
    }
    count
}

fn count_branches(body: Node) -> usize {
    let mut count = 0;
    let mut stack = vec![body];
    while let Some(n) = stack.pop() {
        let mut cursor = n.walk();
        for c in n.children(&mut cursor) {
            if SCOPE_KINDS.contains(&c.kind()) || c.kind() == "lambda" {
                continue;
            }
            if BRANCH_KINDS.contains(&c.kind()) {
                count += 1;
            }
            stack.push(c);
        }
    }
    count
}
