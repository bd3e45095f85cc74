"""
Measuring how much a passage helps
==================================

A four-word mock language model predicts "paris" with probability 1/4 on its
own and 1/2 once the passage "paris-doc" is in the prompt. The gain of a
passage is the perplexity of the gold answer under the contrastive
distribution; lower means the passage helps more.
"""

from gainrag import GainConfig, MockBackend, MockLMSpec, Passage, gain_signal

vocab = ["paris", "london", "rome", "berlin"]
spec = MockLMSpec.uniform(vocab, rules=[
    ("paris-doc", {"paris": 0.5, "london": 1 / 6, "rome": 1 / 6, "berlin": 1 / 6}),
])
lm = MockBackend(spec)

q = "What is the capital of France?"
helpful, unrelated = Passage("p1", "paris-doc"), Passage("p2", "a page about cheese")

# alpha = 0 is ordinary perplexity with the passage in the prompt
for alpha in (0.0, 0.5, 1.0, 2.0):
    cfg = GainConfig(alpha=alpha)
    print(f"alpha={alpha:<4} helpful={gain_signal(lm, q, helpful, 'paris', cfg):.4f} "
          f"unrelated={gain_signal(lm, q, unrelated, 'paris', cfg):.4f}")

# the approximate mode skips the renormalization over the vocabulary
approx = GainConfig(alpha=0.5, mode="approximate")
print("approximate, helpful:", round(gain_signal(lm, q, helpful, "paris", approx), 4))
