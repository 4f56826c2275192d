"""Seeded generator for planted-signal Java search corpora.

Each entry belongs to one of three families, and its query can only be
matched through that family's cue:

structure
    generic variable names; the query names the control constructs used
    (``repeatedly`` for a while loop, ``safely`` for try/catch, ...), never
    the keywords themselves.
variable
    descriptive camelCase locals (``invoiceTotal``) whose words make up the
    query; no library calls.
api
    calls into the JVM standard library; the query describes the calls.

Structure and variable snippets never touch JVM library types, so only the
api family passes the JVM API filter.
"""

from __future__ import annotations

import random

from .corpus import CorpusEntry

FAMILIES = ("structure", "variable", "api")

VERBS = ["process", "handle", "prepare", "refresh", "compute", "resolve", "produce", "derive"]
OBJECTS = ["value", "input", "data", "result", "state", "entry"]
METHOD_NAMES = ["execute", "perform", "run", "apply", "invoke", "call"]

# construct -> (query word, code lines); lines use only generic names
CONSTRUCTS = {
    "while": ("repeatedly", ["while (tmp > b) {", "    tmp = visit(tmp);", "}"]),
    "foreach": ("every", ["for (Item item : items) {", "    acc = mix(acc, item);", "}"]),
    "forindex": ("counting", ["for (int i = 0; i < b; i++) {", "    acc += i;", "}"]),
    "if": ("conditionally", ["if (acc > a) {", "    acc = step(acc);", "}"]),
    "ifelse": ("alternatively", ["if (tmp < 0) {", "    tmp = step(b);", "} else {", "    tmp = visit(a);", "}"]),
    "trycatch": ("safely", ["try {", "    acc = emit(acc);", "} catch (Fault e) {", "    acc = 0;", "}"]),
    "tryfinally": ("cleanly", ["try {", "    tmp = emit(tmp);", "} finally {", "    release(tmp);", "}"]),
    "switch": ("dispatching", ["switch (a) {", "    case 0:", "        acc = step(acc);", "        break;",
                               "    default:", "        acc = visit(acc);", "}"]),
    "dowhile": ("eagerly", ["do {", "    tmp = step(tmp);", "} while (tmp < a);"]),
    "sync": ("atomically", ["synchronized (lock) {", "    acc = mix(acc, tmp);", "}"]),
    "throw": ("strictly", ["if (b < 0) {", "    throw new Fault(b);", "}"]),
}

NOUNS = """invoice customer ledger balance order ticket payload budget profile session account
vendor shipment coupon discount salary tax rate score rating review player window border
margin cursor buffer quota credit debit tariff freight parcel voucher subscriber tenant
lease mortgage premium claim policy patient dosage sensor reading signal pixel volume""".split()

# (query phrase, declared locals, code lines); locals are unique across snippets
API_SNIPPETS = [
    ("encrypt with a cipher", ["Cipher cipher = Cipher.getInstance(\"AES\");", "byte[] sealed = cipher.doFinal(buf);"]),
    ("hash using a message digest", ["MessageDigest md = MessageDigest.getInstance(\"SHA-256\");",
                                     "byte[] hashed = md.digest(buf);"]),
    ("read all bytes of a file", ["byte[] raw = Files.readAllBytes(Paths.get(path));"]),
    ("compile a regex pattern", ["Pattern pattern = Pattern.compile(expr);", "Matcher matcher = pattern.matcher(text);"]),
    ("sort the collection", ["Collections.sort(names);"]),
    ("sleep the current thread", ["Thread.sleep(delay);"]),
    ("append to a string builder", ["StringBuilder sb = new StringBuilder();", "sb.append(text);"]),
    ("parse an integer", ["int parsed = Integer.parseInt(text);"]),
    ("take the math maximum", ["int best = Math.max(a, b);"]),
    ("encode base64", ["String encoded = Base64.getEncoder().encodeToString(buf);"]),
    ("generate a random uuid", ["UUID uid = UUID.randomUUID();"]),
    ("read the system clock", ["long now = System.currentTimeMillis();"]),
    ("open an http connection", ["URL url = new URL(address);",
                                 "HttpURLConnection conn = (HttpURLConnection) url.openConnection();"]),
    ("format a date", ["SimpleDateFormat fmt = new SimpleDateFormat(\"yyyy-MM-dd\");", "String day = fmt.format(date);"]),
    ("make a big decimal", ["BigDecimal amount = new BigDecimal(text);"]),
    ("copy an array", ["System.arraycopy(buf, 0, copy, 0, a);"]),
    ("fill secure random bytes", ["SecureRandom rnd = new SecureRandom();", "rnd.nextBytes(copy);"]),
    ("increment an atomic counter", ["AtomicInteger counter = new AtomicInteger();", "counter.incrementAndGet();"]),
    ("write text to a file", ["FileWriter writer = new FileWriter(path);", "writer.write(text);"]),
    ("read a line from a buffered reader", ["BufferedReader reader = new BufferedReader(new StringReader(text));",
                                            "String line = reader.readLine();"]),
    ("count keys in a hash map", ["Map<String, Integer> counts = new HashMap<>();", "counts.put(text, a);"]),
    ("collect into an array list", ["List<String> items = new ArrayList<>();", "items.add(text);"]),
    ("gzip compress the stream", ["GZIPOutputStream gz = new GZIPOutputStream(sink);", "gz.write(buf);"]),
    ("url encode the text", ["String escaped = URLEncoder.encode(text, \"UTF-8\");"]),
    ("compute a crc32 checksum", ["CRC32 crc = new CRC32();", "crc.update(buf);"]),
    ("lowercase with a locale", ["String lower = text.toLowerCase(Locale.ROOT);"]),
    ("trim the string", ["String trimmed = text.trim();"]),
    ("split the string", ["String[] parts = text.split(expr);"]),
]


def _indent(lines, depth=1):
    return ["    " * depth + line for line in lines]


def _method(rng: random.Random, signature: str, body: list[str]) -> str:
    return "\n".join([signature + " {"] + _indent(body) + ["}"])


def _structure_entry(rng: random.Random):
    kinds = rng.sample(sorted(CONSTRUCTS), rng.choice([3, 4]))
    body = ["int tmp = step(a);", "int acc = visit(b);"]
    for k in kinds:
        body += CONSTRUCTS[k][1]
    body.append("return acc + tmp;")
    name = rng.choice(METHOD_NAMES)
    code = _method(rng, f"public int {name}(int a, int b, Item[] items)", body)
    words = [CONSTRUCTS[k][0] for k in kinds]
    query = f"{rng.choice(VERBS)} the {rng.choice(OBJECTS)} {', '.join(words[:-1])} and {words[-1]}"
    return code, query, tuple(sorted(kinds))


def _camel(a: str, b: str) -> str:
    return a + b[0].upper() + b[1:]


def _variable_entry(rng: random.Random):
    nouns = rng.sample(NOUNS, 6)
    v1, v2, v3 = _camel(nouns[0], nouns[1]), _camel(nouns[2], nouns[3]), _camel(nouns[4], nouns[5])
    body = [
        f"double {v1} = step(a);",
        f"double {v2} = visit(source);",
        f"double {v3} = mix({v1}, {v2});",
    ]
    noise = rng.choice(sorted(CONSTRUCTS))
    if rng.random() < 0.5:
        body = ["int tmp = step(a);", "int acc = visit(b);"] + body + CONSTRUCTS[noise][1]
    else:
        body = ["int tmp = step(a);", "int acc = visit(b);"] + CONSTRUCTS[noise][1] + body
    body.append(f"return {v3} + acc + tmp;")
    name = rng.choice(METHOD_NAMES)
    code = _method(rng, f"public double {name}(int a, int b, Item source, Item[] items)", body)
    query = (f"{rng.choice(VERBS)} {nouns[0]} {nouns[1]} with {nouns[2]} {nouns[3]} "
             f"into {nouns[4]} {nouns[5]}")
    return code, query, (v1, v2, v3)


def _api_entry(rng: random.Random):
    picks = rng.sample(range(len(API_SNIPPETS)), 3)
    picks_sorted = sorted(picks)
    body = []
    for p in picks:
        body += API_SNIPPETS[p][1]
    body.append("return a;")
    name = rng.choice(METHOD_NAMES)
    code = _method(rng, f"public int {name}(int a, int b, byte[] buf, byte[] copy, String text, String expr, "
                        f"String path, String address, long delay, Object date, Object sink, List<String> names)"
                        " throws Exception", body)
    phrases = [API_SNIPPETS[p][0] for p in picks]
    query = f"{rng.choice(VERBS)} the {rng.choice(OBJECTS)}: {phrases[0]}, {phrases[1]} and {phrases[2]}"
    return code, query, tuple(picks_sorted)


_BUILDERS = {"structure": _structure_entry, "variable": _variable_entry, "api": _api_entry}


def generate_labeled(n_per_family: int = 200, seed: int = 0, prefix: str = "syn",
                     n_total: int | None = None) -> list[tuple[CorpusEntry, str]]:
    """``3 * n_per_family`` (entry, family) rows in seeded shuffled order.

    No two entries of a family share a cue signature. ``n_total`` keeps only
    the first rows of the shuffled list.
    """
    rng = random.Random(seed)
    rows = []
    for family in FAMILIES:
        seen = set()
        while len(seen) < n_per_family:
            code, query, signature = _BUILDERS[family](rng)
            if signature in seen:
                continue
            seen.add(signature)
            rows.append((family, code, query))
    rng.shuffle(rows)
    rows = rows[:n_total] if n_total is not None else rows
    return [(CorpusEntry(f"{prefix}-{i:04d}", code, query), family) for i, (family, code, query) in enumerate(rows)]


def generate_corpus(n_per_family: int = 200, seed: int = 0, prefix: str = "syn",
                    n_total: int | None = None) -> list[CorpusEntry]:
    return [entry for entry, _ in generate_labeled(n_per_family, seed, prefix, n_total)]


# recipes for the corpora shipped in the package data directory
BUNDLED = {
    "synthetic_600.jsonl": {"n_per_family": 200, "seed": 0, "prefix": "syn"},
    "mini_200.jsonl": {"n_per_family": 67, "seed": 1, "prefix": "mini", "n_total": 200},
}
