//! Minimal element tree over quick-xml.
//!
//! Element names are stored by local name (prefixes stripped). Whitespace-only
//! text between child elements is dropped; comments and processing
//! instructions are ignored. Serialization is canonical: no declaration-level
//! whitespace, attributes in stored order, `&<>"'` escaped.

use quick_xml::escape::{escape, resolve_predefined_entity};
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

use super::CodecError;

pub const XML_DECLARATION: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct XmlElement {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub text: String,
    pub children: Vec<XmlElement>,
}

impl XmlElement {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn with_text(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.push((key.into(), value.into()));
        self
    }

    pub fn push(&mut self, child: XmlElement) -> &mut Self {
        self.children.push(child);
        self
    }

    pub fn child(&self, name: &str) -> Option<&XmlElement> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attributes.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Follows a `/`-separated chain of child names.
    pub fn path(&self, path: &str) -> Option<&XmlElement> {
        path.split('/').try_fold(self, |el, name| el.child(name))
    }

    pub fn write_to(&self, out: &mut String) {
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attributes {
            out.push(' ');
            out.push_str(k);
            out.push_str("=\"");
            out.push_str(&escape(v.as_str()));
            out.push('"');
        }
        if self.text.is_empty() && self.children.is_empty() {
            out.push_str("/>");
            return;
        }
        out.push('>');
        out.push_str(&escape(self.text.as_str()));
        for child in &self.children {
            child.write_to(out);
        }
        out.push_str("</");
        out.push_str(&self.name);
        out.push('>');
    }

    /// Serializes a document rooted at this element, with the XML declaration.
    pub fn to_document(&self) -> Vec<u8> {
        let mut out = String::with_capacity(2048);
        out.push_str(XML_DECLARATION);
        self.write_to(&mut out);
        out.into_bytes()
    }
}

fn local_name(name: &str) -> String {
    match name.rsplit_once(':') {
        Some((_, local)) => local.to_string(),
        None => name.to_string(),
    }
}

fn start_element(start: &BytesStart<'_>) -> Result<XmlElement, CodecError> {
    let mut el = XmlElement::new(local_name(start.name().0));
    for attr in start.attributes() {
        let attr = attr.map_err(|e| CodecError::MalformedXml(e.to_string()))?;
        let key = attr.key.0.to_string();
        let value = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|e| CodecError::MalformedXml(e.to_string()))?
            .into_owned();
        el.attributes.push((key, value));
    }
    Ok(el)
}

fn finish(mut el: XmlElement) -> XmlElement {
    if !el.children.is_empty() && el.text.trim().is_empty() {
        el.text.clear();
    }
    el
}

/// Parses a UTF-8 document into its root element.
pub fn parse_document(bytes: &[u8]) -> Result<XmlElement, CodecError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CodecError::MalformedXml(format!("input is not UTF-8: {e}")))?;
    let mut reader = Reader::from_str(text);
    reader.config_mut().check_end_names = true;

    let mut stack: Vec<XmlElement> = Vec::new();
    let mut root: Option<XmlElement> = None;
    let malformed = |e: quick_xml::Error| CodecError::MalformedXml(e.to_string());

    loop {
        match reader.read_event().map_err(malformed)? {
            Event::Start(start) => {
                if root.is_some() {
                    return Err(CodecError::MalformedXml("content after root element".into()));
                }
                stack.push(start_element(&start)?);
            }
            Event::Empty(start) => {
                let el = start_element(&start)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(CodecError::MalformedXml("content after root element".into())),
                }
            }
            Event::End(_) => {
                let el = finish(
                    stack
                        .pop()
                        .ok_or_else(|| CodecError::MalformedXml("unbalanced closing tag".into()))?,
                );
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                let content = t.xml10_content();
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&content),
                    None if content.trim().is_empty() => {}
                    None => return Err(CodecError::MalformedXml("text outside root element".into())),
                }
            }
            Event::CData(c) => {
                let raw = c.xml10_content().into_owned();
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&raw),
                    None => return Err(CodecError::MalformedXml("CDATA outside root".into())),
                }
            }
            Event::GeneralRef(r) => {
                let resolved = if r.is_char_ref() {
                    r.resolve_char_ref().map_err(malformed)?.map(String::from)
                } else {
                    resolve_predefined_entity(&r.xml10_content()).map(str::to_string)
                };
                let resolved = resolved
                    .ok_or_else(|| CodecError::MalformedXml(format!("unknown entity &{};", r.xml10_content())))?;
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&resolved),
                    None => return Err(CodecError::MalformedXml("entity outside root".into())),
                }
            }
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
            Event::Eof => break,
        }
    }
    if !stack.is_empty() {
        return Err(CodecError::MalformedXml("unexpected end of input".into()));
    }
    root.ok_or_else(|| CodecError::MalformedXml("no root element".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_elements_and_strips_prefixes() {
        let doc = br#"<?xml version="1.0"?>
            <ns:Doc xmlns:ns="urn:x"><ns:A k="v&amp;w">hi &lt;there&gt;</ns:A><B/></ns:Doc>"#;
        let root = parse_document(doc).unwrap();
        assert_eq!(root.name, "Doc");
        assert_eq!(root.attr("xmlns:ns"), Some("urn:x"));
        let a = root.child("A").unwrap();
        assert_eq!(a.text, "hi <there>");
        assert_eq!(a.attr("k"), Some("v&w"));
        assert!(root.child("B").unwrap().children.is_empty());
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            &b"<a><b></a>"[..],
            b"<a>",
            b"",
            b"<a/><b/>",
            b"<a>&bogus;</a>",
            b"\xff\xfe<a/>",
        ] {
            assert!(
                matches!(parse_document(bad), Err(CodecError::MalformedXml(_))),
                "accepted {:?}",
                String::from_utf8_lossy(bad)
            );
        }
    }

    #[test]
    fn canonical_output_escapes_and_reparses() {
        let mut root = XmlElement::new("Doc").with_attr("q", "\"x\"");
        root.push(XmlElement::with_text("T", "a & b < c"));
        root.push(XmlElement::new("E"));
        let bytes = root.to_document();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("<T>a &amp; b &lt; c</T><E/>"));
        assert_eq!(parse_document(&bytes).unwrap(), root);
    }
}
