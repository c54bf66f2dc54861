"""Builds the page images and canned chat-completion responses in fixtures/.

The responses imitate a vision-language model transcribing the pages: most
tokens are confident, and a few planted misreadings sit in regions of high
uncertainty. Replay archives are then recorded from these responses with

    cargo test -p entroheat-cli --test record_fixtures -- --ignored

Run from the repository root: python3 fixtures/tools/make_fixtures.py
"""

import json
import math
import random
import re
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

ROOT = Path(__file__).resolve().parents[1]

PAGE = r"""\section*{3. Heat flow on a bounded domain}

Let $\Omega \subset \mathbb{R}^d$ be a bounded domain with smooth boundary $\partial\Omega$. We study the initial value problem
\begin{equation}
u_t = \kappa \Delta u + f(x,t), \quad x \in \Omega, \; t > 0,
\end{equation}
with $u = 0$ on $\partial\Omega$ and $u(x,0) = u_0(x)$. Expanding in the Dirichlet eigenfunctions $\phi_n$ with eigenvalues $0 < \lambda_1 \le \lambda_2 \le \cdots$ gives
\begin{equation}
u(x,t) = \sum_{n=1}^{\infty} c_n e^{-\kappa \lambda_n t} \phi_n(x), \qquad c_n = \int_\Omega u_0 \phi_n \, dx.
\end{equation}
In particular $\|u(\cdot,t)\|_{L^2} \le e^{-\kappa \lambda_1 t} \|u_0\|_{L^2}$ when $f = 0$, so every solution decays at the rate fixed by the first eigenvalue.

\textbf{Remark 3.1.} The constant $\kappa > 0$ is the diffusivity. For the unit square one has $\lambda_1 = 2\pi^2$, and the decay time is $1/(2\pi^2\kappa)$.
"""

# (correct text in the image, misread text in the transcription)
PAGE_ERRORS = [
    (r"u_0(x)", r"u_o(x)"),
    (r"\lambda_1 t}", r"\lambda_l t}"),
    (r"2\pi^2$,", r"2\pi^3$,"),
]

PAGE2 = r"""\begin{tabular}{lll}
Method & Order & Cost per step \\
\hline
Forward Euler & $O(h)$ & $1$ \\
Crank--Nicolson & $O(h^2)$ & $1 + s$ \\
BDF2 & $O(h^2)$ & $2$ \\
\end{tabular}

The stability region of BDF2 contains the sector $|\arg(-z)| < \theta$ with $\theta = 90^\circ$, hence the scheme is $A$-stable. For the stiff system $y' = Ay$ with $\sigma(A) \subset \{\Re z \le -\mu\}$ the error after $N$ steps is bounded by $C h^2 \|y''\|_\infty$.
"""

PAGE2_ERRORS = [
    (r"$\theta = 90^\circ$", r"$\theta = 9O^\circ$"),
]

TOKEN_RE = re.compile(r"\\[A-Za-z]+|\\.| ?[A-Za-z]+| ?\d|\n+| +|.", re.S)

CONFUSABLE = {
    "l": ["1", "I", "|"], "1": ["l", "I", "7"], "0": ["O", "o", "8"], "o": ["0", "a", "e"],
    "O": ["0", "Q", "D"], "3": ["8", "2", "5"], "2": ["3", "z", "Z"], "9": ["g", "4", "0"],
    "u": ["v", "n", "μ"], "n": ["m", "h", "r"], "t": ["f", "l", "i"], "x": ["X", "\\times", "y"],
}
FILLER = [" ", ",", ".", "{", "}", "_", "^", " the", " a", "\\", "(", ")", "$", "-", "=", "\n"]


def tokenize(text):
    tokens = TOKEN_RE.findall(text)
    assert "".join(tokens) == text
    return tokens


def alternatives(token, rng, count):
    out = []
    core = token.lstrip(" ")
    lead = token[: len(token) - len(core)]
    for ch_idx, ch in enumerate(core):
        for sub in CONFUSABLE.get(ch, []):
            out.append(lead + core[:ch_idx] + sub + core[ch_idx + 1:])
    if core[:1].isalpha():
        out.append(lead + core.swapcase())
        out.append((" " + core) if not lead else core)
    pool = FILLER[:]
    rng.shuffle(pool)
    out.extend(pool)
    seen, uniq = {token}, []
    for alt in out:
        if alt not in seen:
            seen.add(alt)
            uniq.append(alt)
    return uniq[:count]


def confident(rng, width, p1=None):
    p1 = rng.uniform(0.965, 0.9995) if p1 is None else p1
    rest = 1.0 - p1
    weights = sorted((rng.random() for _ in range(width - 1)), reverse=True)
    scale = rest * rng.uniform(0.55, 0.9) / sum(weights)
    return [p1] + [w * scale for w in weights]


def uncertain(rng, width, top, spread=(0.8, 0.95)):
    weights = sorted((rng.random() ** 2 for _ in range(width - 1)), reverse=True)
    rest = (1.0 - top) * rng.uniform(*spread)
    # alternatives stay below the top choice; any excess goes to the tail
    return [top] + [min(w * rest / sum(weights), 0.9 * top) for w in weights]


def build_response(text, errors, seed, ks, hard_radius=3, escalate_tail=False, spread=(0.8, 0.95)):
    """Returns {k: response} for one page; all k share one underlying distribution."""
    rng = random.Random(seed)
    wrong_text = text
    spans = []
    for right, wrong in errors:
        pos = wrong_text.index(right)
        wrong_text = wrong_text[:pos] + wrong + wrong_text[pos + len(right):]
        spans.append((pos, pos + len(wrong), right, wrong))
    tokens = tokenize(wrong_text)
    width = max(ks) + 3
    offsets, acc = [], 0
    for tok in tokens:
        offsets.append(acc)
        acc += len(tok)

    # substitutions keep lengths, so offsets agree between the two texts
    wrong_chars = {start + j for start, _, right, wrong in spans for j in range(len(right)) if right[j] != wrong[j]}
    error_tokens = [i for i, off in enumerate(offsets) if any(off <= c < off + len(tokens[i]) for c in wrong_chars)]
    hard = set()
    for i in error_tokens:
        for j in range(i - hard_radius, i + hard_radius + 1):
            if 0 <= j < len(tokens):
                hard.add(j)

    k_max = max(ks)
    entries = []
    off_list_done = False
    for i, tok in enumerate(tokens):
        alts = alternatives(tok, rng, width - 1)
        while len(alts) < width - 1:
            alts.append("~" * (len(alts) + 2))
        if escalate_tail and i in error_tokens:
            # flat head: the first five hold 0.7, the first ten 0.96
            probs = [0.3, 0.15, 0.1, 0.08, 0.07, 0.06, 0.06, 0.05, 0.05, 0.04] + [0.01 / (width - 10)] * (width - 10)
        elif i in error_tokens:
            probs = uncertain(rng, width, rng.uniform(0.38, 0.5), spread)
        elif i in hard:
            probs = uncertain(rng, width, rng.uniform(0.5, 0.75), spread)
        elif tok.strip() and rng.random() < 0.06:
            probs = uncertain(rng, width, rng.uniform(0.8, 0.93), spread)
        else:
            probs = confident(rng, width)
        texts = [tok] + alts
        chosen_lp = math.log(probs[0])
        if i in error_tokens:
            # the correct reading is the runner-up
            right = text[offsets[i]:offsets[i] + len(tok)]
            if right in texts:
                texts.remove(right)
            texts.insert(1, right)
            texts = texts[:width]
        elif not off_list_done and i in hard and tok.strip():
            # the sampled token ranks just outside the largest top list
            off_list_done = True
            texts.remove(tok)
            texts.insert(k_max, tok)
            chosen_lp = math.log(probs[k_max])
        entries.append((tok, chosen_lp, list(zip(texts, probs))))

    responses = {}
    for k in ks:
        content = []
        for chosen, chosen_lp, dist in entries:
            top = dist[:k]
            content.append({
                "token": chosen,
                "logprob": round(chosen_lp, 6),
                "bytes": list(chosen.encode()),
                "top_logprobs": [
                    {"token": t, "logprob": round(math.log(p), 6), "bytes": list(t.encode())} for t, p in top
                ],
            })
        responses[k] = {
            "id": f"chatcmpl-fixture-{seed}-{k}",
            "object": "chat.completion",
            "created": 1760000000,
            "model": "gpt-4o-2024-08-06",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": wrong_text, "refusal": None},
                "logprobs": {"content": content, "refusal": None},
                "finish_reason": "stop",
            }],
            "usage": {"prompt_tokens": 1105, "completion_tokens": len(tokens), "total_tokens": 1105 + len(tokens)},
        }
    truth = sorted(set(i + 1 for i in error_tokens))
    return responses, truth, len(tokens)


def draw_page(text, path, size=(1100, 900)):
    img = Image.new("L", size, 255)
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default(size=17)
    y = 30
    for line in text.split("\n"):
        while line:
            cut = line if len(line) <= 105 else line[: line.rfind(" ", 0, 105) + 1 or 105]
            draw.text((30, y), cut, fill=0, font=font)
            line = line[len(cut):]
            y += 24
        y += 4 if line == "" else 0
    img.save(path, optimize=False)


def is_special(tok):
    core = tok.strip(" \t")
    return bool(core) and re.fullmatch(r"(\n|```)+", core) is not None


def write_transcript(path, meta, tokens, seed):
    """tokens: list of (text, top probability); alternatives are made up."""
    rng = random.Random(seed)
    lines = [json.dumps({"meta": meta, "text": "".join(t for t, _ in tokens)}, ensure_ascii=False)]
    for i, (tok, p1) in enumerate(tokens, 1):
        alts = alternatives(tok, rng, 4)
        probs = uncertain(rng, 5, p1) if p1 < 0.9 else confident(rng, 5, p1)
        row = {"i": i, "text": tok, "alts": [[t, round(math.log(p), 6)] for t, p in zip([tok] + alts, probs)]}
        if is_special(tok):
            row["special"] = True
        lines.append(json.dumps(row, ensure_ascii=False))
    path.write_text("\n".join(lines) + "\n")


TINY = [
    ("The", 0.99), (" mean", 0.98), (" value", 0.97), (" is", 0.99), (" $", 0.95), ("\\", 0.96), ("bar", 0.97),
    ("{x", 0.93), ("}", 0.99), (" =", 0.98), (" ", 0.96), ("3", 0.55), (".", 0.62), ("5", 0.48), ("1", 0.51),
    ("$", 0.92), (" for", 0.99), (" all", 0.98), (" $", 0.97), ("n", 0.95), (" >", 0.97), (" ", 0.9),
    ("1", 0.97), ("$", 0.99), (".", 0.995), ("\n", 0.99),
]

SPECIAL = [
    ("\\section", 0.99), ("*{", 0.98), ("Costs", 0.9), (" &", 0.6), (" fees", 0.7), ("}", 0.99), ("\n\n", 0.99),
    ("50", 0.95), ("%", 0.55), (" of", 0.97), (" $", 0.9), ("x_", 0.5), ("{i", 0.45), ("}^", 0.5), ("2", 0.6),
    ("$", 0.9), (" #", 0.4), ("1", 0.7), (" ~", 0.35), ("\\", 0.4), ("{}", 0.5), (" <", 0.6), ("/script", 0.5),
    (">", 0.7), (" caf\u00e9", 0.8), (" \u2192", 0.6), (" \u222b", 0.5), ("\t", 0.9), ("```", 0.97),
    ("\n", 0.99), ("a_b", 0.55), (" & ", 0.6), ("&amp;", 0.5), (" \"q\"", 0.7), (" '", 0.8), ("\\{", 0.6),
    ("\\}", 0.6), (" }{", 0.5), ("\\\\", 0.7), ("\n", 0.99), ("end", 0.99), (" \r", 0.5), ("\n", 0.99),
]


def main():
    write_transcript(ROOT / "tiny.jsonl", {"document": "tiny", "k": 5}, TINY, seed=1)
    write_transcript(ROOT / "special_chars.transcript.jsonl", {"document": "special-chars", "k": 5}, SPECIAL, seed=2)
    draw_page(PAGE, ROOT / "page.png")
    draw_page(PAGE2, ROOT / "page2.png", size=(1100, 420))

    responses, truth, n = build_response(PAGE, PAGE_ERRORS, seed=20251, ks=[5])
    (ROOT / "responses" / "page.k5.json").write_text(json.dumps(responses[5], indent=1, ensure_ascii=False) + "\n")
    print("page tokens", n, "errors at", truth)
    ann = {"doc": "page.png", "annotator": "reader-a", "flagged": truth}
    (ROOT / "page.annotations.a.json").write_text(json.dumps(ann) + "\n")
    ann_b = {"doc": "page.png", "annotator": "reader-b", "flagged": truth[:-1] + [truth[-1] + 1]}
    (ROOT / "page.annotations.b.json").write_text(json.dumps(ann_b) + "\n")

    responses, truth2, n2 = build_response(PAGE2, PAGE2_ERRORS, seed=20252, ks=[5, 10], escalate_tail=True, spread=(0.95, 0.99))
    for k, resp in responses.items():
        (ROOT / "responses" / f"page2.k{k}.json").write_text(json.dumps(resp, indent=1, ensure_ascii=False) + "\n")
    print("page2 tokens", n2, "errors at", truth2)

    corrections = [{"wrong": w, "right": r} for r, w in PAGE_ERRORS + PAGE2_ERRORS]
    (ROOT / "responses" / "corrections.json").write_text(json.dumps(corrections, indent=1) + "\n")


if __name__ == "__main__":
    main()
