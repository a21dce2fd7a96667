"""forgelab: desk-scale knowledge-guided deepfake detection lab.

Everything runs on CPU with synthetic toy faces; no pretrained weights or
external data are required. Subpackages:

- numnn:      numpy tensor substrate, layers with explicit backward passes,
              Adam, gradient checking, checkpoint format
- geometry:   landmarks, forgery regions, convex hulls, affine warps
- blending:   mask blending and Poisson (gradient-domain) blending
- simulate:   self-blended forgery simulation and QA-pair generation
- encoders:   toy image/text encoders and the feature cache format
- kfd:        knowledge-guided forgery detector (consistency maps, locator,
              classifier, losses, train step)
- fpl:        forgery prompt learner and prompt assembly
- lm:         byte-level toy decoder LM with LoRA adapters
- llm_client: chat-completion HTTP client and scripted mock server
- evalproto:  response parsing, frame sampling, AUC/AP, segmentation scores
- cli / service: command-line surface and HTTP service
"""

__version__ = "0.1.0"
