//! Built-in helper tools and a toy browser to exercise them.
//!
//! `res_handler` hands a prompt straight to a model. `next_action` reads a
//! whole page, asks the model for one browsing decision, and applies fixed
//! fallbacks to the reply. Both reach the model through the orchestrator's
//! gateway with the `helper_tool` tag.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::HelperRoute;
use crate::gateway::{CompletionRequest, RequestTag};

/// Prompts longer than this many characters are cut before sending.
pub const HELPER_PROMPT_CHARS: usize = 20_000;

pub const BOTTOM_MARKER: &str = "[Reached the bottom of the page.]\n";

const DECISION_FORMAT: &str =
    "<thought>your thought of your decision</thought>\n<action>click_url(specific_url) or end() or not_found()</action>";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("model call failed: {0}")]
    Gateway(String),
    #[error("no clickable link named '{0}'")]
    UnknownLink(String),
    #[error("no previous page")]
    NoPreviousPage,
    #[error("site: {0}")]
    Site(String),
}

fn truncate_chars(text: &str, cap: usize) -> &str {
    match text.char_indices().nth(cap) {
        Some((at, _)) => &text[..at],
        None => text,
    }
}

/// One completion over the first 20,000 characters of `prompt`.
pub fn res_handler(prompt: &str, route: &HelperRoute<'_>) -> Result<String, ToolError> {
    if prompt.is_empty() {
        return Err(ToolError::EmptyPrompt);
    }
    let request = CompletionRequest::new(route.model, truncate_chars(prompt, HELPER_PROMPT_CHARS), RequestTag::HelperTool)
        .scope(route.scope.to_string());
    route
        .gateway
        .complete(&request)
        .map_err(|e| ToolError::Gateway(e.to_string()))
}

fn clickable_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Clickable '([^']*)'").expect("valid pattern"))
}

/// Link names in document order, duplicates kept.
pub fn extract_clickable(page: &str) -> Vec<String> {
    clickable_re()
        .captures_iter(page)
        .map(|c| c[1].to_string())
        .collect()
}

/// A static site of named pages, viewed one segment at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserState {
    pub pages: BTreeMap<String, String>,
    pub current: String,
    pub history_stack: Vec<String>,
    pub scroll_cursor: usize,
    pub lines_per_segment: usize,
}

impl BrowserState {
    pub fn new(pages: BTreeMap<String, String>, start: &str, lines_per_segment: usize) -> Result<Self, ToolError> {
        if !pages.contains_key(start) {
            return Err(ToolError::Site(format!("start page '{start}' missing")));
        }
        if lines_per_segment == 0 {
            return Err(ToolError::Site("lines_per_segment must be positive".into()));
        }
        Ok(Self {
            pages,
            current: start.to_string(),
            history_stack: Vec::new(),
            scroll_cursor: 0,
            lines_per_segment,
        })
    }

    /// Loads every `*.txt` file in `dir`; the page id is the file stem.
    pub fn load_dir(dir: &Path, start: &str, lines_per_segment: usize) -> Result<Self, ToolError> {
        let entries = fs::read_dir(dir).map_err(|e| ToolError::Site(format!("{}: {e}", dir.display())))?;
        let mut pages = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| ToolError::Site(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = fs::read_to_string(&path).map_err(|e| ToolError::Site(format!("{}: {e}", path.display())))?;
            pages.insert(id, text);
        }
        Self::new(pages, start, lines_per_segment)
    }

    /// The current page cut into consecutive runs of whole lines. Joining
    /// the segments gives back the page text.
    pub fn segments(&self) -> Vec<String> {
        let text = &self.pages[&self.current];
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        if lines.is_empty() {
            return vec![String::new()];
        }
        lines.chunks(self.lines_per_segment).map(|c| c.concat()).collect()
    }

    pub fn view(&mut self) -> String {
        self.scroll_cursor = 0;
        self.segments().swap_remove(0)
    }

    pub fn scroll_down(&mut self) -> String {
        let segments = self.segments();
        if self.scroll_cursor + 1 < segments.len() {
            self.scroll_cursor += 1;
            segments[self.scroll_cursor].clone()
        } else {
            self.scroll_cursor = segments.len();
            BOTTOM_MARKER.to_string()
        }
    }

    pub fn click_url(&mut self, name: &str) -> Result<String, ToolError> {
        if !self.pages.contains_key(name) {
            return Err(ToolError::UnknownLink(name.to_string()));
        }
        self.history_stack.push(std::mem::replace(&mut self.current, name.to_string()));
        Ok(self.view())
    }

    pub fn go_to_previous_page(&mut self) -> Result<String, ToolError> {
        let previous = self.history_stack.pop().ok_or(ToolError::NoPreviousPage)?;
        self.current = previous;
        Ok(self.view())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "argument", rename_all = "snake_case")]
pub enum BrowseAction {
    /// Holds the text between `click_url(` and the closing parenthesis,
    /// exactly as the model wrote it.
    ClickUrl(String),
    End,
    GoToPreviousPage,
}

impl BrowseAction {
    /// The link name with surrounding quotes and spaces removed.
    pub fn target(&self) -> Option<String> {
        match self {
            BrowseAction::ClickUrl(arg) => Some(arg.trim().trim_matches(|c| c == '\'' || c == '"').to_string()),
            _ => None,
        }
    }
}

impl fmt::Display for BrowseAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BrowseAction::ClickUrl(arg) => write!(f, "click_url({arg})"),
            BrowseAction::End => f.write_str("end()"),
            BrowseAction::GoToPreviousPage => f.write_str("go_to_previous_page()"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextActionDecision {
    pub action: BrowseAction,
    pub whole_page: String,
}

/// Scrolls to the bottom, appending every segment to `current_page`.
pub fn read_whole_page(current_page: &str, browser: &mut BrowserState) -> String {
    let mut whole = current_page.to_string();
    loop {
        let next = browser.scroll_down();
        if next == BOTTOM_MARKER {
            return whole;
        }
        whole.push_str(&next);
    }
}

/// The decision prompt. `visited_here` lists links on this page that were
/// already visited; when it is empty the visited sentence is left out.
pub fn decision_prompt(query: &str, whole_page: &str, visited_here: &[String]) -> String {
    let head = format!(
        "You are viewing page contents, the content is: \n{whole_page}\n You should make decision on the next step. given user query {query}, you have the following options, please follow the output format. \n1. end(): it means current user query can be answered by current page content. \n2. click_url(URL): it means current user query should be checked by clicking one of the urls shown on the current page content for more details. specify the detailed url into URL field.\n"
    );
    if visited_here.is_empty() {
        format!(
            "{head}Please visit any Clickable urls as many as possible that has not been visited. \n3. not_found(): it means that current page does not contain answer for current query and all Clickable URLS have been clicked. \nYour output format: {DECISION_FORMAT}\n\nYour Output:\n"
        )
    } else {
        let listed = visited_here
            .iter()
            .map(|u| format!("'{u}'"))
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "{head}3. not_found(): it means that current page does not contain answer for current query and all Clickable URLS have been clicked. \nRemember that you have visited the url list [{listed}]. You are not allowed to visit the urls you have visited. Please visit any Clickable urls as many as possible that has not been visited.\nYour output format: {DECISION_FORMAT}\n\nYour Output:\n"
        )
    }
}

fn click_quoted_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"click_url\('.*'\)").expect("valid pattern"))
}

fn click_any_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"click_url\(.*\)").expect("valid pattern"))
}

fn click_action(matched: &str) -> BrowseAction {
    let inner = &matched["click_url(".len()..matched.len() - 1];
    BrowseAction::ClickUrl(inner.to_string())
}

/// Applies the fixed fallback rules to a model reply.
pub fn interpret_decision(reply: &str, whole_page: &str, unvisited: usize) -> BrowseAction {
    let says_end = reply.contains("end()");
    if !whole_page.contains("Clickable") && !says_end {
        return BrowseAction::GoToPreviousPage;
    }
    if !says_end && unvisited == 0 {
        return BrowseAction::GoToPreviousPage;
    }
    if reply.contains("click_url") {
        if let Some(m) = click_quoted_re().find(reply).or_else(|| click_any_re().find(reply)) {
            return click_action(m.as_str());
        }
    } else if says_end {
        return BrowseAction::End;
    } else if reply.contains("not_found()") {
        return BrowseAction::GoToPreviousPage;
    }
    BrowseAction::End
}

/// Reads the rest of the page, asks the model what to do next, and returns
/// the decision with the full page text.
pub fn next_action(
    query: &str,
    current_page: &str,
    visited: &[String],
    route: &HelperRoute<'_>,
    browser: &mut BrowserState,
) -> Result<NextActionDecision, ToolError> {
    let visited: HashSet<String> = visited
        .iter()
        .map(|u| u.replace(['\'', '"'], ""))
        .collect();
    let whole_page = read_whole_page(current_page, browser);
    let (visited_here, unvisited): (Vec<String>, Vec<String>) = extract_clickable(&whole_page)
        .into_iter()
        .partition(|u| visited.contains(u));
    let prompt = decision_prompt(query, &whole_page, &visited_here);
    let reply = res_handler(&prompt, route)?;
    Ok(NextActionDecision {
        action: interpret_decision(&reply, &whole_page, unvisited.len()),
        whole_page,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ModelSpec};
    use std::sync::{Arc, Mutex};

    fn site() -> BrowserState {
        let mut pages = BTreeMap::new();
        pages.insert("home".to_string(), "Welcome\nClickable 'team'\nClickable 'news'\n".to_string());
        pages.insert("team".to_string(), "Henry Santiago\nhenry@example.org\n".to_string());
        pages.insert("news".to_string(), "Nothing new.\n".to_string());
        BrowserState::new(pages, "home", 1).unwrap()
    }

    fn recording(reply: &'static str) -> (Gateway, Arc<Mutex<Vec<String>>>) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let gw = Gateway::from_backend(move |r: &CompletionRequest| {
            log.lock().unwrap().push(r.prompt.clone());
            Ok(reply.to_string())
        });
        (gw, seen)
    }

    #[test]
    fn clickable_extraction() {
        assert_eq!(extract_clickable("Clickable 'a' text Clickable 'b'"), vec!["a", "b"]);
        assert!(extract_clickable("no links here").is_empty());
        assert_eq!(extract_clickable("Clickable 'x' Clickable 'x'"), vec!["x", "x"]);
    }

    #[test]
    fn scrolling_and_navigation() {
        let mut b = site();
        assert_eq!(b.view(), "Welcome\n");
        assert_eq!(b.scroll_down(), "Clickable 'team'\n");
        assert_eq!(b.scroll_down(), "Clickable 'news'\n");
        assert_eq!(b.scroll_down(), BOTTOM_MARKER);
        assert_eq!(b.scroll_down(), BOTTOM_MARKER);
        b.click_url("team").unwrap();
        assert_eq!(b.current, "team");
        b.go_to_previous_page().unwrap();
        assert_eq!(b.current, "home");
        assert_eq!(b.click_url("missing"), Err(ToolError::UnknownLink("missing".into())));
        assert_eq!(b.go_to_previous_page(), Err(ToolError::NoPreviousPage));
    }

    #[test]
    fn segments_partition_the_page() {
        let b = site();
        assert_eq!(b.segments().concat(), b.pages["home"]);
    }

    #[test]
    fn res_handler_truncates_and_rejects_empty() {
        let (gw, seen) = recording("summary");
        let model = ModelSpec::scripted("m");
        let route = HelperRoute { gateway: &gw, model: &model, scope: "t" };
        let long = "x".repeat(25_000);
        assert_eq!(res_handler(&long, &route).unwrap(), "summary");
        assert_eq!(seen.lock().unwrap()[0].chars().count(), 20_000);
        assert_eq!(res_handler("", &route), Err(ToolError::EmptyPrompt));
        assert_eq!(gw.audit_count(RequestTag::HelperTool), 1);
    }

    #[test]
    fn multibyte_truncation_counts_chars() {
        let text = "é".repeat(20_005);
        assert_eq!(truncate_chars(&text, HELPER_PROMPT_CHARS).chars().count(), 20_000);
    }

    #[test]
    fn fallback_rules() {
        // no links on the page and no end()
        assert_eq!(interpret_decision("click_url('x')", "plain text", 0), BrowseAction::GoToPreviousPage);
        // everything visited
        assert_eq!(
            interpret_decision("<action>click_url('a')</action>", "Clickable 'a'", 0),
            BrowseAction::GoToPreviousPage
        );
        assert_eq!(interpret_decision("<action>end()</action>", "text", 0), BrowseAction::End);
        assert_eq!(interpret_decision("not_found()", "Clickable 'a'", 1), BrowseAction::GoToPreviousPage);
        assert_eq!(interpret_decision("hmm", "Clickable 'a'", 1), BrowseAction::End);
        assert_eq!(
            interpret_decision("<action>click_url('a')</action>", "Clickable 'a'", 1),
            BrowseAction::ClickUrl("'a'".into())
        );
        assert_eq!(
            interpret_decision("click_url(a) now", "Clickable 'a'", 1),
            BrowseAction::ClickUrl("a".into())
        );
        // click_url mentioned but never called: falls through to end()
        assert_eq!(interpret_decision("click_url is pointless", "Clickable 'a'", 1), BrowseAction::End);
    }

    #[test]
    fn greedy_match_spans_to_last_quote_paren() {
        let action = interpret_decision("click_url('a') or click_url('b')", "Clickable 'a'", 2);
        assert_eq!(action.to_string(), "click_url('a') or click_url('b')");
    }

    #[test]
    fn next_action_reads_whole_page_and_picks_prompt_variant() {
        let model = ModelSpec::scripted("m");
        let (gw, seen) = recording("<action>click_url('team')</action>");
        let route = HelperRoute { gateway: &gw, model: &model, scope: "t" };
        let mut b = site();
        let first = b.view();
        let d = next_action("find email", &first, &[], &route, &mut b).unwrap();
        assert_eq!(d.whole_page, b.pages["home"]);
        assert_eq!(d.action.target().as_deref(), Some("team"));
        assert!(!seen.lock().unwrap()[0].contains("Remember that you have visited"));

        let first = b.view();
        let d = next_action("find email", &first, &["\"team\"".into()], &route, &mut b).unwrap();
        assert!(seen.lock().unwrap()[1].contains("visited the url list ['team']"));
        assert_eq!(d.action, BrowseAction::ClickUrl("'team'".into()));
    }
}
