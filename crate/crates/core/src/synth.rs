//! Deterministic generator of small, MBPP-style Python tasks.
//!
//! Each task is a short natural-language description plus a 5-12 line
//! function drawn from a fixed template pool, with identifiers and
//! constants varied by a seeded RNG. Used for tests, benches and the
//! `synth` CLI command.

use crate::corpus::{Dataset, Task};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Template {
    text: &'static str,
    code: &'static str,
}

// Placeholders: {f} function name, {a} {b} parameter names, {x} loop
// variable, {r} accumulator, {k} small positive integer.
const TEMPLATES: &[Template] = &[
    Template {
        text: "Write a function to find the sum of all elements in a list.",
        code: "def {f}({a}):\n    {r} = 0\n    for {x} in {a}:\n        {r} += {x}\n    return {r}",
    },
    Template {
        text: "Write a function to find the maximum value in a list.",
        code: "def {f}({a}):\n    {r} = {a}[0]\n    for {x} in {a}:\n        if {x} > {r}:\n            {r} = {x}\n    return {r}",
    },
    Template {
        text: "Write a python function to count the even numbers in a list.",
        code: "def {f}({a}):\n    {r} = 0\n    for {x} in {a}:\n        if {x} % 2 == 0:\n            {r} += 1\n    return {r}",
    },
    Template {
        text: "Write a function to reverse a given string.",
        code: "def {f}({a}):\n    {r} = \"\"\n    for {x} in {a}:\n        {r} = {x} + {r}\n    return {r}",
    },
    Template {
        text: "Write a function to check whether a number is prime.",
        code: "def {f}({a}):\n    if {a} < 2:\n        return False\n    for {x} in range(2, {a}):\n        if {a} % {x} == 0:\n            return False\n    return True",
    },
    Template {
        text: "Write a function to compute the factorial of a number.",
        code: "def {f}({a}):\n    {r} = 1\n    for {x} in range(1, {a} + 1):\n        {r} = {r} * {x}\n    return {r}",
    },
    Template {
        text: "Write a function to find the common elements of two lists.",
        code: "def {f}({a}, {b}):\n    {r} = []\n    for {x} in {a}:\n        if {x} in {b} and {x} not in {r}:\n            {r}.append({x})\n    return {r}",
    },
    Template {
        text: "Write a function to count the vowels in a string.",
        code: "def {f}({a}):\n    {r} = 0\n    for {x} in {a}:\n        if {x} in \"aeiou\":\n            {r} += 1\n    return {r}",
    },
    Template {
        text: "Write a function to return the n-th fibonacci number.",
        code: "def {f}({a}):\n    {x}, {r} = 0, 1\n    for _ in range({a}):\n        {x}, {r} = {r}, {x} + {r}\n    return {x}",
    },
    Template {
        text: "Write a function to multiply every element of a list by {k}.",
        code: "def {f}({a}):\n    {r} = []\n    for {x} in {a}:\n        {r}.append({x} * {k})\n    return {r}",
    },
    Template {
        text: "Write a function to remove duplicates from a list while keeping order.",
        code: "def {f}({a}):\n    {b} = set()\n    {r} = []\n    for {x} in {a}:\n        if {x} not in {b}:\n            {b}.add({x})\n            {r}.append({x})\n    return {r}",
    },
    Template {
        text: "Write a function to find the index of an element in a list.",
        code: "def {f}({a}, {b}):\n    for {x} in range(len({a})):\n        if {a}[{x}] == {b}:\n            return {x}\n    return -1",
    },
    Template {
        text: "Write a function to compute the average of a list of numbers.",
        code: "def {f}({a}):\n    if len({a}) == 0:\n        return 0\n    {r} = 0\n    for {x} in {a}:\n        {r} += {x}\n    return {r} / len({a})",
    },
    Template {
        text: "Write a function to check whether a string is a palindrome.",
        code: "def {f}({a}):\n    {b} = len({a})\n    for {x} in range({b} // 2):\n        if {a}[{x}] != {a}[{b} - 1 - {x}]:\n            return False\n    return True",
    },
    Template {
        text: "Write a function to count the words in a sentence.",
        code: "def {f}({a}):\n    {r} = 0\n    for {x} in {a}.split():\n        {r} += 1\n    return {r}",
    },
    Template {
        text: "Write a function to find the maximum sum of a contiguous subarray.",
        code: "def {f}({a}):\n    {r} = {a}[0]\n    {b} = 0\n    for {x} in {a}:\n        {b} = max({x}, {b} + {x})\n        {r} = max({r}, {b})\n    return {r}",
    },
    Template {
        text: "Write a function to return the elements of a list greater than {k}.",
        code: "def {f}({a}):\n    {r} = []\n    for {x} in {a}:\n        if {x} > {k}:\n            {r}.append({x})\n    return {r}",
    },
    Template {
        text: "Write a function to compute the power of a number by repeated multiplication.",
        code: "def {f}({a}, {b}):\n    {r} = 1\n    for _ in range({b}):\n        {r} = {r} * {a}\n    return {r}",
    },
    Template {
        text: "Write a function to sum the digits of a number.",
        code: "def {f}({a}):\n    {r} = 0\n    while {a} > 0:\n        {r} += {a} % 10\n        {a} = {a} // 10\n    return {r}",
    },
    Template {
        text: "Write a function to merge two sorted lists.",
        code: "def {f}({a}, {b}):\n    {r} = []\n    {x} = 0\n    while {x} < len({a}):\n        {r}.append({a}[{x}])\n        {x} += 1\n    {r}.extend({b})\n    return sorted({r})",
    },
    Template {
        text: "Write a function to compute the distance of a point from the origin.",
        code: "import math\ndef {f}({a}, {b}):\n    {r} = {a} * {a} + {b} * {b}\n    if {r} == 0:\n        return 0\n    return math.sqrt({r})",
    },
    Template {
        text: "Write a function to find all numbers in a string using regex.",
        code: "import re\ndef {f}({a}):\n    {r} = re.findall(r\"\\d+\", {a})\n    if not {r}:\n        return []\n    return [int({x}) for {x} in {r}]",
    },
    Template {
        text: "Write a function to find the {k} largest integers from a list.",
        code: "import heapq\ndef {f}({a}):\n    {r} = heapq.nlargest({k}, {a})\n    {b} = sorted({r})\n    return {b}",
    },
    Template {
        text: "Write a function to find the most common element in a list.",
        code: "from collections import Counter\ndef {f}({a}):\n    {r} = Counter({a})\n    {b} = {r}.most_common(1)\n    return {b}[0][0]",
    },
    Template {
        text: "Write a function to compute the square root of a number, rejecting negative input.",
        code: "import math\ndef {f}({a}):\n    if {a} < 0:\n        raise ValueError(\"negative input\")\n    {r} = math.sqrt({a})\n    return {r}",
    },
    Template {
        text: "Write a function to divide two numbers and report division by zero.",
        code: "def {f}({a}, {b}):\n    if {b} == 0:\n        print(\"division by zero\")\n        return None\n    {r} = {a} / {b}\n    return {r}",
    },
    Template {
        text: "Write a function to print the elements of a list one per line.",
        code: "def {f}({a}):\n    {r} = 0\n    for {x} in {a}:\n        print({x})\n        {r} += 1\n    return {r}",
    },
    Template {
        text: "Write a function to halve a number until it drops below {k}.",
        code: "def {f}({a}):\n    {r} = 0\n    while {a} >= {k}:\n        {a} = {a} / 2\n        {r} += 1\n    return {r}",
    },
    Template {
        text: "Write a function to return the absolute difference of two numbers.",
        code: "def {f}({a}, {b}):\n    if {a} > {b}:\n        return {a} - {b}\n    else:\n        return {b} - {a}",
    },
    Template {
        text: "Write a function to find the sum of squares of the first n numbers.",
        code: "def {f}({a}):\n    {r} = 0\n    for {x} in range({a} + 1):\n        {r} += {x} ** 2\n    return {r}",
    },
];

const FUNCTION_NAMES: &[&str] = &[
    "solve",
    "compute",
    "find_value",
    "get_result",
    "process",
    "calc",
    "helper",
    "check",
    "count_items",
    "transform",
    "evaluate",
    "run",
];
const PARAMS: &[&str] = &["nums", "arr", "items", "data", "values", "lst", "s", "n", "text", "seq"];
const SECOND: &[&str] = &["other", "target", "m", "seen", "size", "key"];
const LOOP_VARS: &[&str] = &["i", "j", "x", "item", "v", "c"];
const ACCS: &[&str] = &["result", "total", "res", "acc", "out", "best"];

fn render(template: &Template, rng: &mut ChaCha8Rng) -> (String, String) {
    let pick = |rng: &mut ChaCha8Rng, pool: &[&'static str]| *pool.choose(rng).expect("non-empty pool");
    let f = pick(rng, FUNCTION_NAMES);
    let a = pick(rng, PARAMS);
    let b = pick(rng, SECOND);
    let x = pick(rng, LOOP_VARS);
    let r = pick(rng, ACCS);
    let k = rng.gen_range(1..=9).to_string();
    let code = template
        .code
        .replace("{f}", f)
        .replace("{a}", a)
        .replace("{b}", b)
        .replace("{x}", x)
        .replace("{r}", r)
        .replace("{k}", &k);
    (template.text.replace("{k}", &k), code)
}

/// `n` clean tasks with ids `synth-0 .. synth-{n-1}`, ground truth marked
/// clean. The same `(n, seed)` always yields the same dataset.
pub fn generate(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = (0..n)
        .map(|i| {
            let template = TEMPLATES.choose(&mut rng).expect("non-empty template pool");
            let (text, code) = render(template, &mut rng);
            let mut task = Task::new(format!("synth-{i}"), text, code);
            task.poisoned = Some(false);
            task
        })
        .collect();
    Dataset::new(format!("synth-{n}-{seed}"), tasks)
}

/// Split at the midpoint: the first half trains a model, the second half is
/// the evaluation pool.
pub fn split_half(dataset: &Dataset) -> (Dataset, Dataset) {
    let mid = dataset.len() / 2;
    let train = Dataset::new(format!("{}-train", dataset.meta.name), dataset.tasks[..mid].to_vec());
    let eval = Dataset::new(format!("{}-eval", dataset.meta.name), dataset.tasks[mid..].to_vec());
    (train, eval)
}

/// Strings used to train an n-gram backend: text and code joined the way
/// detectors score them.
pub fn training_strings(dataset: &Dataset) -> Vec<String> {
    dataset
        .tasks
        .iter()
        .map(|t| crate::lm::scoring_input(&t.text, &t.code))
        .collect()
}
