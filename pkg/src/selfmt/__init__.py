"""Self-supervised NMT on comparable corpora, augmented with online
back-translation, word translation and noising, plus word-embedding and
denoising-autoencoder initialization and bilingual finetuning."""

__version__ = "0.1.0"
