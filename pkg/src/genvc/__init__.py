"""genvc: desk-scale generative voice conversion.

Audio is tokenized by two discrete VAEs (content at 12.5 Hz, acoustics at
23.4375 Hz), a prompt encoder distills a target-speaker style embedding, a
dual-head causal token LM rewrites content tokens into acoustic tokens under
that style, and a conditioned vocoder renders the LM's hidden states back to
a waveform. An EER harness scores how well conversions hide the source
speaker.
"""

__version__ = "0.1.0"
