//! Desk-scale task suites with generator-computed answers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use toc_core::model::{AnswerChecker, TaskSpec, ToolDescription};

use crate::suite::SuiteFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Decoder,
    Trade,
    Web,
    ApiBank,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Decoder, Category::Trade, Category::Web, Category::ApiBank];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Decoder => "decoder",
            Category::Trade => "trade",
            Category::Web => "web",
            Category::ApiBank => "api_bank",
        }
    }
}

fn tool(name: &str, description: &str, signature: &str, example: Option<&str>) -> ToolDescription {
    ToolDescription {
        name: name.into(),
        description: description.into(),
        fn_signature: signature.into(),
        output_example: example.map(str::to_string),
    }
}

fn bindings(prefix: &str, tools: &[ToolDescription]) -> BTreeMap<String, String> {
    tools
        .iter()
        .map(|t| (t.name.clone(), format!("{prefix}.{}", t.name)))
        .collect()
}

/// Generates `n` tasks of one category. The same seed gives the same suite.
pub fn generate_suite(category: Category, n: usize, seed: u64) -> SuiteFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (category as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let suite_id = format!("{}-{n}", category.as_str());
    match category {
        Category::Decoder => decoder_suite(suite_id, n, &mut rng),
        Category::Trade => trade_suite(suite_id, n, &mut rng),
        Category::Web => web_suite(suite_id, n, &mut rng),
        Category::ApiBank => api_bank_suite(suite_id, n, &mut rng),
    }
}

// ---------------------------------------------------------------------------
// message decoder

const WORDS: &[&str] = &[
    "amber", "bridge", "candle", "delta", "ember", "falcon", "garden", "harbor", "island", "jungle", "kettle",
    "lantern", "meadow", "nectar", "orchid", "pepper", "quartz", "river", "saddle", "timber", "umbrella",
    "velvet", "willow", "yonder", "zephyr",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cipher {
    Caesar(u8),
    Reverse,
    Atbash,
}

impl Cipher {
    pub fn describe(self) -> String {
        match self {
            Cipher::Caesar(k) => format!("a Caesar shift of {k}"),
            Cipher::Reverse => "a full reversal of the text".into(),
            Cipher::Atbash => "the Atbash substitution".into(),
        }
    }

    fn map_letters(text: &str, f: impl Fn(u8) -> u8) -> String {
        text.bytes()
            .map(|b| if b.is_ascii_lowercase() { f(b - b'a') + b'a' } else { b } as char)
            .collect()
    }

    pub fn encode(self, text: &str) -> String {
        match self {
            Cipher::Caesar(k) => Self::map_letters(text, |x| (x + k) % 26),
            Cipher::Reverse => text.chars().rev().collect(),
            Cipher::Atbash => Self::map_letters(text, |x| 25 - x),
        }
    }
}

fn decoder_suite(suite_id: String, n: usize, rng: &mut ChaCha8Rng) -> SuiteFile {
    let tools = vec![
        tool(
            "caesar_decode",
            "Shifts every lowercase letter back by `shift` positions in the alphabet.",
            "caesar_decode(text: str, shift: int) -> str",
            Some("caesar_decode('khoor', 3) -> 'hello'"),
        ),
        tool("reverse_text", "Reverses the text.", "reverse_text(text: str) -> str", Some("reverse_text('abc') -> 'cba'")),
        tool(
            "atbash",
            "Maps a to z, b to y, and so on. Applying it twice gives the input back.",
            "atbash(text: str) -> str",
            Some("atbash('abc') -> 'zyx'"),
        ),
    ];
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let words: Vec<&str> = WORDS.choose_multiple(rng, 3).copied().collect();
        let plain = words.join(" ");
        let steps = rng.gen_range(1..=2);
        let ciphers: Vec<Cipher> = (0..steps)
            .map(|_| match rng.gen_range(0..3) {
                0 => Cipher::Caesar(rng.gen_range(1..=25)),
                1 => Cipher::Reverse,
                _ => Cipher::Atbash,
            })
            .collect();
        let encoded = ciphers.iter().fold(plain.clone(), |t, c| c.encode(&t));
        let recipe = ciphers.iter().map(|c| c.describe()).collect::<Vec<_>>().join(", then ");
        tasks.push(TaskSpec {
            id: format!("decoder-{:03}", i + 1),
            query: format!(
                "Decode the secret message \"{encoded}\". It was produced from the original text by applying {recipe}. What is the original message?"
            ),
            tools: tools.clone(),
            checker: AnswerChecker::keywords_all(words.iter().copied()),
            category: "decoder".into(),
        });
    }
    SuiteFile {
        suite_id,
        tasks,
        tool_bindings: bindings("decoder", &tools),
        resources: BTreeMap::new(),
    }
}

// ---------------------------------------------------------------------------
// trade calculator

/// Rounds `num / den` half away from zero.
fn div_round(num: i64, den: i64) -> i64 {
    let q = num / den;
    let r = num % den;
    if 2 * r.abs() >= den {
        q + num.signum()
    } else {
        q
    }
}

pub fn format_cents(cents: i64) -> String {
    let sign = if cents < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents.abs() / 100, cents.abs() % 100)
}

/// Net profit in cents: (sell - buy) * qty minus a fee in basis points on
/// the sale amount, rounded to the cent.
pub fn trade_profit_cents(buy_cents: i64, sell_cents: i64, qty: i64, fee_bp: i64) -> i64 {
    let sale = sell_cents * qty;
    sale - buy_cents * qty - div_round(sale * fee_bp, 10_000)
}

fn trade_suite(suite_id: String, n: usize, rng: &mut ChaCha8Rng) -> SuiteFile {
    let tools = vec![
        tool("multiply", "Multiplies two numbers exactly.", "multiply(a: float, b: float) -> float", Some("multiply(2.5, 4) -> 10.0")),
        tool("subtract", "Subtracts b from a exactly.", "subtract(a: float, b: float) -> float", Some("subtract(10, 2.5) -> 7.5")),
        tool(
            "percent_of",
            "Returns `percent` percent of `amount`, rounded to cents.",
            "percent_of(amount: float, percent: float) -> float",
            Some("percent_of(200, 1.5) -> 3.0"),
        ),
    ];
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let buy = rng.gen_range(500..20_000i64);
        let sell = buy + rng.gen_range(1..5_000i64);
        let qty = rng.gen_range(1..=400i64);
        let fee_bp = *[25i64, 50, 100, 150, 250].choose(rng).expect("non-empty");
        let profit = trade_profit_cents(buy, sell, qty, fee_bp);
        tasks.push(TaskSpec {
            id: format!("trade-{:03}", i + 1),
            query: format!(
                "You bought {qty} shares at ${} each and later sold all of them at ${} each. The broker charges a fee of {}% on the total sale amount. What is your net profit in dollars, rounded to the cent?",
                format_cents(buy),
                format_cents(sell),
                fee_bp as f64 / 100.0
            ),
            tools: tools.clone(),
            checker: AnswerChecker::keywords_all([format_cents(profit)]),
            category: "trade".into(),
        });
    }
    SuiteFile {
        suite_id,
        tasks,
        tool_bindings: bindings("trade", &tools),
        resources: BTreeMap::new(),
    }
}

// ---------------------------------------------------------------------------
// toy web

const FIRST: &[&str] = &["henry", "maria", "oscar", "lena", "tariq", "yuki", "ines", "pavel", "nora", "diego"];
const LAST: &[&str] = &["santiago", "okafor", "lindqvist", "moreau", "haddad", "tanaka", "ruiz", "novak", "weber", "costa"];
const DEPTS: &[&str] = &["research", "sales", "support", "finance", "legal"];

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

/// Resource key of page `page` of a task's site.
pub fn page_key(task_id: &str, page: &str) -> String {
    format!("{task_id}/{page}")
}

pub fn browser_tools() -> Vec<ToolDescription> {
    vec![
        tool("view", "Returns the first segment of the current page.", "view() -> str", None),
        tool("scroll_down", "Returns the next segment of the current page.", "scroll_down() -> str", None),
        tool(
            "click_url",
            "Opens the Clickable link with the given name and returns its first segment.",
            "click_url(url: str) -> str",
            None,
        ),
        tool("go_to_previous_page", "Returns to the previous page.", "go_to_previous_page() -> str", None),
        tool(
            "next_action",
            "Examines the current page and decides the next browsing step. Returns the action and the whole page content.",
            "next_action(query: str, current_page_content: str, visited_urls: List[str]) -> Tuple[str, str]",
            None,
        ),
        tool(
            "res_handler",
            "Sends a prompt to a language model and returns its completion.",
            "res_handler(prompt: str) -> str",
            None,
        ),
    ]
}

fn web_suite(suite_id: String, n: usize, rng: &mut ChaCha8Rng) -> SuiteFile {
    let tools = browser_tools();
    let mut resources = BTreeMap::new();
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("web-{:03}", i + 1);
        let depts: Vec<&str> = DEPTS.choose_multiple(rng, 3).copied().collect();
        let mut home = String::from("Staff directory\n");
        let mut people = Vec::new();
        for dept in &depts {
            home.push_str(&format!("Clickable '{dept}'\n"));
            let mut page = format!("{} department\n", title(dept));
            for _ in 0..3 {
                let (f, l) = (*FIRST.choose(rng).expect("names"), *LAST.choose(rng).expect("names"));
                let slug = format!("{f}-{l}");
                if people.iter().any(|(s, _, _)| s == &slug) {
                    continue;
                }
                page.push_str(&format!("Clickable '{slug}'\n"));
                let email = format!("{f}.{l}@{dept}.example.org");
                resources.insert(
                    page_key(&id, &slug),
                    format!("{} {}\nDepartment: {}\nEmail: {email}\n", title(f), title(l), title(dept)),
                );
                people.push((slug, format!("{} {}", title(f), title(l)), email));
            }
            resources.insert(page_key(&id, dept), page);
        }
        resources.insert(page_key(&id, "home"), home);
        let (_, name, email) = people.choose(rng).expect("at least one person").clone();
        tasks.push(TaskSpec {
            id,
            query: format!("Find the email of {name}. Answer in the format of 'xxx@xxx.xxx'."),
            tools: tools.clone(),
            checker: AnswerChecker::keywords_all([email]),
            category: "web".into(),
        });
    }
    SuiteFile {
        suite_id,
        tasks,
        tool_bindings: bindings("browser", &tools),
        resources,
    }
}

// ---------------------------------------------------------------------------
// API-bank style multi-call chains

/// Exchange rates to USD in hundredths of a cent per unit.
pub const RATES_TO_USD: &[(&str, i64)] = &[("USD", 10_000), ("EUR", 10_850), ("GBP", 12_700), ("JPY", 67)];

pub fn rate(currency: &str) -> i64 {
    RATES_TO_USD
        .iter()
        .find(|(c, _)| *c == currency)
        .map(|(_, r)| *r)
        .expect("known currency")
}

/// Converts cents of `currency` into USD cents, rounded.
pub fn to_usd_cents(cents: i64, currency: &str) -> i64 {
    div_round(cents * rate(currency), 10_000)
}

fn api_bank_suite(suite_id: String, n: usize, rng: &mut ChaCha8Rng) -> SuiteFile {
    let tools = vec![
        tool(
            "search_user",
            "Looks up a customer by full name.",
            "search_user(name: str) -> dict",
            Some(r#"{"user_id": "u-104"}"#),
        ),
        tool(
            "get_account",
            "Returns the primary account of a customer.",
            "get_account(user_id: str) -> dict",
            Some(r#"{"account_id": "acc-9", "currency": "EUR"}"#),
        ),
        tool(
            "get_balance",
            "Returns the current balance of an account in its own currency.",
            "get_balance(account_id: str) -> dict",
            Some(r#"{"balance": 1520.75}"#),
        ),
        tool(
            "convert_currency",
            "Converts an amount between currencies at today's rate, rounded to cents.",
            "convert_currency(amount: float, source: str, target: str) -> float",
            Some("1659.01"),
        ),
    ];
    let mut resources = BTreeMap::new();
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("api-{:03}", i + 1);
        let name = format!(
            "{} {}",
            title(FIRST.choose(rng).expect("names")),
            title(LAST.choose(rng).expect("names"))
        );
        let user_id = format!("u-{}", rng.gen_range(100..1000));
        let account_id = format!("acc-{}", rng.gen_range(1..100));
        let currency = RATES_TO_USD[rng.gen_range(1..RATES_TO_USD.len())].0;
        let balance = rng.gen_range(10_000..2_000_000i64);
        let db = json!({
            "users": {name.as_str(): {"user_id": user_id}},
            "accounts": {user_id.as_str(): {"account_id": account_id, "currency": currency}},
            "balances": {account_id.as_str(): {"balance_cents": balance}},
        });
        resources.insert(format!("{id}/db"), serde_json::to_string_pretty(&db).expect("json"));
        tasks.push(TaskSpec {
            id,
            query: format!("What is the balance of {name}'s primary account, expressed in US dollars?"),
            tools: tools.clone(),
            checker: AnswerChecker::keywords_all([format_cents(to_usd_cents(balance, currency))]),
            category: "api_bank".into(),
        });
    }
    SuiteFile {
        suite_id,
        tasks,
        tool_bindings: bindings("bank", &tools),
        resources,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cents_formatting() {
        assert_eq!(format_cents(123_456), "1234.56");
        assert_eq!(format_cents(-5), "-0.05");
        assert_eq!(format_cents(100), "1.00");
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(div_round(15, 10), 2);
        assert_eq!(div_round(14, 10), 1);
        assert_eq!(div_round(-15, 10), -2);
    }

    #[test]
    fn caesar_and_atbash_invert() {
        assert_eq!(Cipher::Caesar(3).encode("hello"), "khoor");
        assert_eq!(Cipher::Atbash.encode("abc"), "zyx");
        assert_eq!(Cipher::Atbash.encode(&Cipher::Atbash.encode("zephyr river")), "zephyr river");
    }

    #[test]
    fn same_seed_same_suite() {
        for c in Category::ALL {
            assert_eq!(generate_suite(c, 5, 11), generate_suite(c, 5, 11));
            assert_ne!(generate_suite(c, 5, 11), generate_suite(c, 5, 12));
        }
    }
}
