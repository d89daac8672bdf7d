/// Turns text into index terms.
pub trait Analyzer: Send + Sync {
    /// Recorded in index manifests; an index is only valid with the analyzer
    /// version it was built with.
    fn version(&self) -> &str;

    fn analyze(&self, text: &str) -> Vec<String>;
}

/// Lowercased alphanumeric runs. A comma between two digits is dropped and
/// the digits are joined (`61,880` becomes `61880`); every other
/// non-alphanumeric character, quotation marks included, separates terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardAnalyzer;

impl Analyzer for StandardAnalyzer {
    fn version(&self) -> &str {
        "standard-v1"
    }

    fn analyze(&self, text: &str) -> Vec<String> {
        let mut terms = Vec::new();
        let mut current = String::new();
        let mut chars = text.chars().peekable();
        let mut prev_digit = false;
        while let Some(c) = chars.next() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
                prev_digit = c.is_ascii_digit();
                continue;
            }
            if c == ',' && prev_digit && chars.peek().is_some_and(|n| n.is_ascii_digit()) {
                continue;
            }
            if !current.is_empty() {
                terms.push(std::mem::take(&mut current));
            }
            prev_digit = false;
        }
        if !current.is_empty() {
            terms.push(current);
        }
        terms
    }
}

/// Splits on whitespace only, without case folding.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceAnalyzer;

impl Analyzer for WhitespaceAnalyzer {
    fn version(&self) -> &str {
        "whitespace-v1"
    }

    fn analyze(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
}

pub fn analyzer_by_version(version: &str) -> Option<Box<dyn Analyzer>> {
    match version {
        "standard-v1" => Some(Box::new(StandardAnalyzer)),
        "whitespace-v1" => Some(Box::new(WhitespaceAnalyzer)),
        _ => None,
    }
}
