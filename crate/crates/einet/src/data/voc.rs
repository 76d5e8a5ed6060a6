//! VOC-style annotation XML: a small hand-rolled parser for the fixed
//! schema (`annotation > filename, size, object*`) that reports line
//! numbers on malformed input, plus the matching writer.

use crate::data::{class_id, class_name, AnnObject, Annotation};
use crate::error::{Error, Result};

#[derive(Debug)]
struct Element {
    name: String,
    text: String,
    children: Vec<Element>,
    line: usize,
}

impl Element {
    fn child(&self, name: &str) -> Result<&Element> {
        self.children
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Parse { line: self.line, detail: format!("<{}> is missing <{name}>", self.name) })
    }

    fn int(&self) -> Result<i64> {
        self.text
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Parse { line: self.line, detail: format!("<{}> is not an integer: '{}'", self.name, self.text.trim()) })
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser { bytes: src.as_bytes(), pos: 0, line: 1 }
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse { line: self.line, detail: detail.into() }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.pos).copied();
        if let Some(b'\n') = b {
            self.line += 1;
        }
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.bump();
        }
    }

    fn skip_prolog(&mut self) -> Result<()> {
        self.skip_ws();
        while self.bytes[self.pos..].starts_with(b"<?") || self.bytes[self.pos..].starts_with(b"<!--") {
            let close: &[u8] = if self.bytes[self.pos..].starts_with(b"<?") { b"?>" } else { b"-->" };
            loop {
                if self.bytes[self.pos..].starts_with(close) {
                    for _ in 0..close.len() {
                        self.bump();
                    }
                    break;
                }
                if self.bump().is_none() {
                    return Err(self.err("unterminated prolog"));
                }
            }
            self.skip_ws();
        }
        Ok(())
    }

    fn read_name(&mut self) -> Result<String> {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
            self.bump();
        }
        if self.pos == start {
            return Err(self.err("expected a tag name"));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn parse_element(&mut self) -> Result<Element> {
        self.skip_ws();
        let line = self.line;
        if self.bump() != Some(b'<') {
            return Err(self.err("expected '<'"));
        }
        let name = self.read_name()?;
        // skip attributes
        loop {
            match self.peek() {
                Some(b'>') => {
                    self.bump();
                    break;
                }
                Some(b'/') => {
                    self.bump();
                    if self.bump() != Some(b'>') {
                        return Err(self.err("malformed self-closing tag"));
                    }
                    return Ok(Element { name, text: String::new(), children: Vec::new(), line });
                }
                Some(_) => {
                    self.bump();
                }
                None => return Err(self.err(format!("unterminated <{name}> tag"))),
            }
        }
        let mut text = String::new();
        let mut children = Vec::new();
        loop {
            if self.peek().is_none() {
                return Err(self.err(format!("<{name}> is never closed")));
            }
            if self.bytes[self.pos..].starts_with(b"</") {
                self.bump();
                self.bump();
                let close = self.read_name()?;
                if close != name {
                    return Err(self.err(format!("mismatched close tag </{close}> for <{name}>")));
                }
                self.skip_ws();
                if self.bump() != Some(b'>') {
                    return Err(self.err("expected '>' after close tag"));
                }
                return Ok(Element { name, text, children, line });
            }
            if self.peek() == Some(b'<') {
                children.push(self.parse_element()?);
            } else {
                text.push(self.bump().unwrap() as char);
            }
        }
    }
}

/// Parses one annotation XML document. Unknown class names are rejected.
pub fn parse_annotation(xml: &str) -> Result<Annotation> {
    let mut parser = Parser::new(xml);
    parser.skip_prolog()?;
    let root = parser.parse_element()?;
    if root.name != "annotation" {
        return Err(Error::Parse { line: root.line, detail: format!("expected <annotation> root, got <{}>", root.name) });
    }
    let frame_id = root.child("filename")?.text.trim().to_string();
    let size = root.child("size")?;
    let width = size.child("width")?.int()? as u32;
    let height = size.child("height")?.int()? as u32;

    let mut objects = Vec::new();
    for obj in root.children.iter().filter(|c| c.name == "object") {
        let name = obj.child("name")?.text.trim().to_string();
        let class = class_id(&name)?;
        let difficult = match obj.children.iter().find(|c| c.name == "difficult") {
            Some(d) => d.int()? != 0,
            None => false,
        };
        let bb = obj.child("bndbox")?;
        let bbox = [
            bb.child("xmin")?.int()? as i32,
            bb.child("ymin")?.int()? as i32,
            bb.child("xmax")?.int()? as i32,
            bb.child("ymax")?.int()? as i32,
        ];
        objects.push(AnnObject { class_id: class, bbox, difficult });
    }
    let ann = Annotation { frame_id, width, height, objects };
    ann.validate()?;
    Ok(ann)
}

pub fn write_annotation(ann: &Annotation) -> String {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    out.push_str(&format!("  <filename>{}</filename>\n", ann.frame_id));
    out.push_str(&format!(
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>\n",
        ann.width, ann.height
    ));
    for obj in &ann.objects {
        out.push_str("  <object>\n");
        out.push_str(&format!("    <name>{}</name>\n", class_name(obj.class_id)));
        out.push_str(&format!("    <difficult>{}</difficult>\n", if obj.difficult { 1 } else { 0 }));
        out.push_str(&format!(
            "    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n",
            obj.bbox[0], obj.bbox[1], obj.bbox[2], obj.bbox[3]
        ));
        out.push_str("  </object>\n");
    }
    out.push_str("</annotation>\n");
    out
}
