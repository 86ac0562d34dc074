"""
Bidirectional contrastive predictive coding for speech, frozen-feature CTC
recognizers, and the experiment harness that runs the robustness and
multilingual transfer studies on synthetic corpora.
"""
