"""Battery capacity-fade augmentation."""
