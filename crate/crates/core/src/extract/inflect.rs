//! Present-participle ("-ing") forms of verb lemmas.

const IRREGULAR: &[(&str, &str)] = &[
    ("be", "being"),
    ("die", "dying"),
    ("lie", "lying"),
    ("tie", "tying"),
    ("vie", "vying"),
    ("panic", "panicking"),
    ("picnic", "picnicking"),
    ("mimic", "mimicking"),
    ("traffic", "trafficking"),
    ("ski", "skiing"),
    ("quit", "quitting"),
    ("quiz", "quizzing"),
    ("singe", "singeing"),
    ("dye", "dyeing"),
];

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Number of vowel groups, counting a non-initial `y` as a vowel.
fn syllables(word: &str) -> usize {
    let mut count = 0;
    let mut in_vowel = false;
    for (i, c) in word.chars().enumerate() {
        let vowel = is_vowel(c) || (c == 'y' && i > 0);
        if vowel && !in_vowel {
            count += 1;
        }
        in_vowel = vowel;
    }
    count
}

/// Gerund of a lowercase verb lemma: "make" → "making", "sit" → "sitting",
/// "fix" → "fixing".
pub fn gerund(lemma: &str) -> String {
    let lemma = lemma.to_lowercase();
    if let Some((_, form)) = IRREGULAR.iter().find(|(l, _)| *l == lemma) {
        return (*form).to_string();
    }
    let chars: Vec<char> = lemma.chars().collect();
    let n = chars.len();
    if n >= 2 && chars[n - 1] == 'e' && !matches!(chars[n - 2], 'e' | 'y' | 'o') {
        return format!("{}ing", &lemma[..lemma.len() - 1]);
    }
    if n >= 3 && syllables(&lemma) == 1 {
        let (c1, v, c2) = (chars[n - 3], chars[n - 2], chars[n - 1]);
        let cvc = !is_vowel(c1) && is_vowel(v) && !is_vowel(c2) && !matches!(c2, 'w' | 'x' | 'y');
        if cvc {
            return format!("{lemma}{c2}ing");
        }
    }
    format!("{lemma}ing")
}
