"""Deep semantic dictionary learning for multi-label classification.

Class word embeddings are encoded into a dictionary living in visual
feature space; each feature vector is coded over that dictionary by a
ridge solve and the sigmoid of the code gives per-class probabilities.
"""

__version__ = "0.1.0"
